from .accountant import (
    DEFAULT_DELTA,
    DEFAULT_ORDERS,
    PrivacySpent,
    RdpCurve,
    compute_epsilon,
    compute_rdp,
    epsilon_for_steps,
    rdp_sgm,
    rdp_to_epsilon,
)
from .sgd import DpConfig, clip_per_example, dp_aggregate, dp_train, global_norm, make_dp_grad_fn

__all__ = [
    "DEFAULT_DELTA",
    "DEFAULT_ORDERS",
    "DpConfig",
    "PrivacySpent",
    "RdpCurve",
    "clip_per_example",
    "compute_epsilon",
    "compute_rdp",
    "dp_aggregate",
    "dp_train",
    "epsilon_for_steps",
    "global_norm",
    "make_dp_grad_fn",
    "rdp_sgm",
    "rdp_to_epsilon",
]
