"""Wall-clock comparison of encrypted and plaintext workloads on one batch."""
from __future__ import annotations

import os
import platform
import time
from dataclasses import dataclass

import numpy as np

from ..nn.model import Model, weighted_loss_and_grads
from .dealer import TrustedDealer
from .fixed_point import FixedPointCodec
from .inference import encrypted_inference, encrypted_train_step
from .transport import InProcessNetwork, TcpNetwork

WORKLOADS = ("inference", "train_step")


@dataclass(frozen=True)
class RuntimeResult:
    dataset: str
    mode: str  # "encrypted" or "plaintext"
    phase: str  # "inference" or "train_step"
    avg_s: float
    std_s: float
    batch: int
    repeats: int
    hardware: str


def hardware_note() -> str:
    cpu = platform.processor() or platform.machine()
    return f"{cpu}; {os.cpu_count()} logical CPUs; {platform.system()} {platform.release()}; numpy {np.__version__}"


def _time(fn, repeats: int, warmup: int = 1) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.mean(samples)), float(np.std(samples))


def benchmark_runtime(
    model: Model,
    samples: np.ndarray,
    labels: np.ndarray,
    workload: str = "inference",
    batch: int = 8,
    repeats: int = 5,
    dataset: str = "",
    transport: str = "inprocess",
    seed: int = 0,
    learning_rate: float = 0.01,
    codec: FixedPointCodec | None = None,
) -> list[RuntimeResult]:
    """Time ``workload`` on the first ``batch`` samples in both modes.

    Encrypted timings cover sharing of inputs and parameters, dealer
    material, the protocol itself and opening the result.
    """
    if workload not in WORKLOADS:
        raise ValueError(f"workload must be one of {WORKLOADS}")
    x, y = samples[:batch], np.asarray(labels[:batch])
    codec = codec or FixedPointCodec()
    net_cls = TcpNetwork if transport == "tcp" else InProcessNetwork
    counter = iter(range(1 << 30))

    if workload == "inference":
        plain = lambda: model.forward(x)

        def encrypted():
            with net_cls(2) as net:
                encrypted_inference(model, x, codec, net, TrustedDealer(seed + next(counter), 2), seed, batch_size=batch)

    else:
        work = model.copy()

        def plain():
            _, grads, _ = weighted_loss_and_grads(work, x, y)
            for name, p in work.parameters.items():
                p -= learning_rate * grads[name]

        def encrypted():
            with net_cls(2) as net:
                encrypted_train_step(model, x, y, learning_rate, codec, net, TrustedDealer(seed + next(counter), 2), seed)

    note = hardware_note()
    rows = []
    for mode, fn in (("plaintext", plain), ("encrypted", encrypted)):
        avg, std = _time(fn, repeats)
        rows.append(RuntimeResult(dataset, mode, workload, avg, std, len(x), repeats, note))
    return rows
