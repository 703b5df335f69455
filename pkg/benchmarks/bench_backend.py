"""Compiled kernels vs NumPy fallback.

Two tiers:

* micro: the raw kernel functions on gradient-check-sized and desk-scale
  operands (both backends live in one process, so this is a direct A/B);
* end-to-end: fusion-head forward+backward steps via a subprocess per
  backend, since the engine binds its kernel module at import time.

Run from the repo root:

    python benchmarks/bench_backend.py
"""

import os
import subprocess
import sys
import time

import numpy as np

from fuseprobe import backend


def _time(fn, *args, repeat=2000):
    fn(*args)  # warm up
    start = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - start) / repeat


def micro_table():
    if "compiled" not in backend.available_backends():
        print("compiled core not built; skipping micro table")
        return
    compiled = backend.get_kernels("compiled")
    fallback = backend.get_kernels("numpy")
    rng = np.random.default_rng(0)

    cases = []
    for label, m, k, n in (
        ("gemm 8x8 @ 8x8 (grad-check size)", 8, 8, 8),
        ("gemm 80x32 @ 32x32 (desk attention)", 80, 32, 32),
        ("gemm 256x256 @ 256x256 (large)", 256, 256, 256),
    ):
        a = np.ascontiguousarray(rng.normal(size=(m, k)).astype(np.float32))
        b = np.ascontiguousarray(rng.normal(size=(k, n)).astype(np.float32))
        reps = 50 if m >= 256 else 2000
        cases.append((label, _time(compiled.gemm, a, b, repeat=reps),
                      _time(fallback.gemm, a, b, repeat=reps)))
    for label, shape in (
        ("softmax rows 2x5x5 (tiny)", (2, 5, 5)),
        ("softmax rows 8x80x80 (desk attention)", (8, 80, 80)),
    ):
        x = np.ascontiguousarray(rng.normal(size=shape).astype(np.float32))
        cases.append((label, _time(compiled.softmax_lastdim, x),
                      _time(fallback.softmax_lastdim, x)))
    for label, size in (("tanh 160 elems", 160), ("tanh 40960 elems", 40960)):
        x = np.ascontiguousarray(rng.normal(size=size).astype(np.float32))
        reps = 200 if size > 10000 else 2000
        cases.append((label, _time(compiled.tanh_fwd, x, repeat=reps),
                      _time(fallback.tanh_fwd, x, repeat=reps)))

    print(f"{'kernel':45s} {'compiled':>12s} {'numpy':>12s} {'ratio':>7s}")
    for label, c, n in cases:
        print(f"{label:45s} {c * 1e6:10.2f}us {n * 1e6:10.2f}us {n / c:6.2f}x")


def _workload(kind, steps):
    from fuseprobe import autodiff as ad
    from fuseprobe.heads import FusionHead, FusionHeadConfig
    from fuseprobe.probe import build_probe, cross_entropy

    rng = np.random.default_rng(1)
    cfg = FusionHeadConfig(kind=kind, model_dim=32, seed=0)
    head = FusionHead(cfg, randomize_init=True)
    probe = build_probe(cfg, 4)
    tokens = [rng.normal(size=(16, 5, 32)).astype(np.float32) for _ in range(8)]
    start = time.perf_counter()
    for step in range(steps):
        losses = []
        for t in tokens:
            feat = head.forward(ad.Tensor(t), 0)
            losses.append(ad.reshape(cross_entropy(probe.logits(feat), step % 4), (1,)))
        loss = ad.mean(ad.concat(losses, axis=0), axis=0)
        loss.backward()
        for p in list(head.params.values()) + list(probe.params.values()):
            p.zero_grad()
    return time.perf_counter() - start


def end_to_end():
    print()
    print("fusion-head forward+backward, 8 clips x 10 steps (seconds):")
    print(f"{'workload':30s}" + "".join(f"{name:>12s}" for name in backend.available_backends()))
    for kind in ("self_attn_all_avg", "lstm", "tcn"):
        row = f"{kind:30s}"
        for name in backend.available_backends():
            env = dict(os.environ, FUSEPROBE_BACKEND=name)
            out = subprocess.run(
                [sys.executable, os.path.abspath(__file__), "--worker", kind],
                capture_output=True, text=True, env=env, check=True,
            )
            row += f"{float(out.stdout.strip()):12.3f}"
        print(row)


def main(argv):
    if len(argv) >= 2 and argv[0] == "--worker":
        print(f"{_workload(argv[1], 10):.4f}")
        return 0
    print(f"active backend: {backend.BACKEND}; available: {backend.available_backends()}")
    print()
    micro_table()
    end_to_end()
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
