"""Two-stage reverse auction for crowdsourced work.

Workers bid a unit price and a capacity; the requester allocates work by
minimising ``sum_i delta_i**k * x_i**2`` and promises each worker a
maximum payment that makes truthful bidding a dominant strategy. Pay is
then scaled by the fraction of submitted work that passes assessment.
"""

from .allocation import (
    K_INF,
    AllocationResult,
    AuctionInstance,
    allocate,
    allocate_limit_k_inf,
    oracle_allocate,
    solve,
    total_virtual_cost,
)
from .distributions import DEFAULT_BIDS, BidDistribution, tabulated, truncated_lognormal, uniform
from .errors import (
    AuctionError,
    ConfigurationError,
    ContractWarning,
    DomainError,
    InfeasibleError,
    PrecisionError,
    SingularityError,
    SizeError,
)
from .mechanism import BidContext, WorkerProfile, WorkSubmission, run_stage1, run_stage2, worker_utility
from .payment import PaymentSchedule, compute_max_payment, payment_schedule, realized_payment

__version__ = "0.1.0"

__all__ = [
    "K_INF", "AllocationResult", "AuctionInstance", "allocate", "allocate_limit_k_inf",
    "oracle_allocate", "solve", "total_virtual_cost", "DEFAULT_BIDS", "BidDistribution",
    "tabulated", "truncated_lognormal", "uniform", "AuctionError", "ConfigurationError",
    "ContractWarning", "DomainError", "InfeasibleError", "PrecisionError", "SingularityError",
    "SizeError", "BidContext", "WorkerProfile", "WorkSubmission", "run_stage1", "run_stage2",
    "worker_utility", "PaymentSchedule", "compute_max_payment", "payment_schedule",
    "realized_payment",
]
