"""Extended-precision oracle for the RDP accountant.

Evaluates the sampled-Gaussian RDP binomial sum and the RDP -> (eps, delta)
conversion with mpmath at 50 significant digits, independently of the
package code, and freezes the results into tests/data/accountant_golden.json.

    python scripts/accountant_oracle.py            # regenerate
    python scripts/accountant_oracle.py --check    # compare with the frozen file
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import mpmath as mp
import numpy as np

mp.mp.dps = 50
ORDERS = list(range(2, 513))
OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "accountant_golden.json"


def rdp_step(q, sigma, alpha: int) -> mp.mpf:
    q, sigma = mp.mpf(q), mp.mpf(sigma)
    if q == 0:
        return mp.mpf(0)
    total = mp.mpf(0)
    for k in range(alpha + 1):
        total += mp.binomial(alpha, k) * (1 - q) ** (alpha - k) * q**k * mp.exp(k * (k - 1) / (2 * sigma**2))
    return mp.log(total) / (alpha - 1)


def epsilon(q, sigma, steps: int, delta) -> tuple[mp.mpf, int]:
    best, best_order = None, None
    log_inv_delta = mp.log(1 / mp.mpf(delta))
    for a in ORDERS:
        eps = steps * rdp_step(q, sigma, a) + log_inv_delta / (a - 1)
        if best is None or eps < best:
            best, best_order = eps, a
    return best, best_order


def grid(points: int = 50, seed: int = 20240611) -> list[dict]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(points):
        n = int(rng.choice([500, 1000, 3601, 5000, 8926, 20000, 60000]))
        b = int(rng.choice([8, 16, 32, 64, 128, 256]))
        q = b / n
        sigma = float(np.round(rng.uniform(0.3, 4.0), 3))
        steps = int(rng.integers(1, 200)) * math.ceil(n / b)
        delta = float(rng.choice([1e-3, 1e-5, 1e-6]))
        out.append({"q": q, "sigma": sigma, "steps": steps, "delta": delta})
    return out


def build() -> dict:
    points = []
    for i, p in enumerate(grid()):
        eps, order = epsilon(p["q"], p["sigma"], p["steps"], p["delta"])
        points.append({**p, "epsilon": mp.nstr(eps, 30), "order": order})
        print(f"{i:2d} q={p['q']:.5f} sigma={p['sigma']} T={p['steps']} delta={p['delta']:g} -> eps={mp.nstr(eps, 12)} (order {order})", file=sys.stderr)
    eps0, order0 = epsilon(32 / 5000, 0.5, 100 * math.ceil(5000 / 32), 1e-5)
    return {
        "description": "frozen extended-precision (mpmath, 50 digits) RDP accountant values; orders 2..512",
        "orders": [ORDERS[0], ORDERS[-1]],
        "grid": points,
        "golden_epsilon": {"n": 5000, "batch_size": 32, "epochs": 100, "noise_multiplier": 0.5, "delta": 1e-5, "epsilon": mp.nstr(eps0, 30), "order": order0},
        "rdp_point": {"q": 0.0064, "sigma": 0.5, "order": 8, "rdp": mp.nstr(rdp_step(0.0064, 0.5, 8), 30)},
    }


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--check", action="store_true", help="recompute and compare with the frozen file")
    args = ap.parse_args()
    data = build()
    if args.check:
        frozen = json.loads(OUT.read_text())
        same = frozen == data
        print("frozen file matches" if same else "frozen file DIFFERS")
        return 0 if same else 1
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(data, indent=1) + "\n")
    print(f"wrote {OUT}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
