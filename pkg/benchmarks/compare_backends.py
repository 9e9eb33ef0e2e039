"""Compiled versus numpy kernels: per-frame time of the follower loop.

Run ``python benchmarks/compare_backends.py [--N 100 1000 10000]``.  Both
backends process the same noise stream through the same model, and the
script checks that their forward variables agree before timing.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from scorefollow import backend
from scorefollow.emission import synth_models
from scorefollow.eval import machine_info, random_signal_features
from scorefollow.inference import Follower
from scorefollow.model import ModelConfig, Variant, build_performance_hmm, flatten
from scorefollow.simulator import random_score

KERNELS = {"nobreak": Variant.NOBREAK, "break": Variant.BREAK, "baseline": Variant.NOBREAK}


def time_backend(std, kernel: str, name: str, frames: np.ndarray) -> tuple[float, np.ndarray]:
    f = Follower(std, kernel, name)
    dt = np.empty(len(frames))
    for k, y in enumerate(frames):
        t0 = time.perf_counter()
        f.push(y)
        dt[k] = time.perf_counter() - t0
    return float(dt.mean()), f.state.log_alpha


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, nargs="+", default=[100, 1000, 10000])
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--baseline-max-N", type=int, default=1000, help="skip the full sweep above this N")
    a = ap.parse_args(argv)

    if "cython" not in backend.available():
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    models = synth_models()
    frames = np.resize(random_signal_features(2.0, seed=0), (a.frames, models.D))
    print(f"{'N':>7} {'kernel':>9} {'cython ms':>10} {'python ms':>10} {'speedup':>8} {'max|dlog a|':>12}")
    for N in a.N:
        score = random_score(N, seed=N)
        for kernel, variant in KERNELS.items():
            if kernel == "baseline" and N > a.baseline_max_N:
                continue
            std = flatten(build_performance_hmm(score, ModelConfig(variant=variant)), models)
            tc, ac = time_backend(std, kernel, "cython", frames)
            tp, ap_ = time_backend(std, kernel, "python", frames)
            fin = np.isfinite(ac)
            if not np.array_equal(fin, np.isfinite(ap_)):
                raise SystemExit(f"N={N} {kernel}: backends disagree on zero-probability states")
            err = float(np.max(np.abs(ac[fin] - ap_[fin]))) if fin.any() else 0.0
            print(f"{N:>7} {kernel:>9} {tc * 1e3:>10.4f} {tp * 1e3:>10.4f} {tp / tc:>8.1f} {err:>12.2e}")
    for k, v in machine_info().items():
        print(f"# {k}: {v}")


if __name__ == "__main__":
    main()
