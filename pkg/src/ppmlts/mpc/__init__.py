"""Additive secret sharing over Z_2^64 with a trusted dealer (semi-honest)."""
from .bench import RuntimeResult, benchmark_runtime
from .dealer import BeaverTriple, TrustedDealer
from .fixed_point import FixedPointCodec
from .inference import FeatureContribution, encrypted_inference, encrypted_train_step, feature_aggregate
from .party import Party
from .protocols import maxpool_shares, mul_shares, open_shares, relu_shares, run_parties, truncate
from .sharing import Share, add_shares, reconstruct, share
from .transport import InProcessNetwork, TcpNetwork, decode_frame, encode_frame

__all__ = [
    "BeaverTriple",
    "FeatureContribution",
    "FixedPointCodec",
    "InProcessNetwork",
    "Party",
    "RuntimeResult",
    "Share",
    "TcpNetwork",
    "TrustedDealer",
    "add_shares",
    "benchmark_runtime",
    "decode_frame",
    "encode_frame",
    "encrypted_inference",
    "encrypted_train_step",
    "feature_aggregate",
    "maxpool_shares",
    "mul_shares",
    "open_shares",
    "reconstruct",
    "relu_shares",
    "run_parties",
    "share",
    "truncate",
]
