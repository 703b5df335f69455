"""Gradient verification suite: every fusion head, through the probe and
cross-entropy, against central finite differences in double precision.

The suite runs a small configuration (2 attention heads, 2x feed-forward
width) so a full pass over all 13 kinds and several seeds stays within a
minute on one core; tolerances do not depend on the size. Projections are
randomized so no parameter sits at an exactly-zero critical point.
"""

import numpy as np

from . import autodiff as ad
from .heads import KINDS, FusionHead, FusionHeadConfig
from .probe import build_probe, cross_entropy

DEFAULT_TOL = 1e-3


def head_gradient_error(kind, seed, dim=8, frames=4, tokens=5, classes=3, eps=1e-4):
    """Max relative gradient error for one (head kind, seed) combination.

    Differentiates with respect to the input tokens and every head and
    probe parameter.
    """
    cfg = FusionHeadConfig(
        kind=kind, model_dim=dim, num_heads=2, ff_mult=2, t_max=frames, seed=seed
    )
    head = FusionHead(cfg, dtype=np.float64, randomize_init=True)
    probe = build_probe(cfg, classes, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC8EC]))
    tokens_t = ad.Tensor(
        rng.normal(size=(frames, tokens, dim)), requires_grad=True, dtype=np.float64
    )
    target = int(rng.integers(0, classes))
    leaves = [tokens_t] + list(head.params.values()) + list(probe.params.values())

    def objective(*_leaves):
        return cross_entropy(probe.logits(head.forward(tokens_t, 0)), target)

    return ad.grad_check(objective, leaves, eps=eps)


def gradient_check_suite(seeds=(0, 1, 2), tol=DEFAULT_TOL, kinds=KINDS, progress=None):
    """Run the whole suite; returns {kind: worst error over seeds}."""
    results = {}
    for kind in kinds:
        worst = 0.0
        for seed in seeds:
            worst = max(worst, head_gradient_error(kind, seed))
        results[kind] = worst
        if progress is not None:
            status = "ok" if worst < tol else "FAIL"
            progress(f"{kind:22s} max_rel_err={worst:.3e}  [{status}]")
    return results


def probe_gradient_error(dim=8, classes=4, seed=0, relu_variant=False, eps=1e-4):
    """Probe-only check (linear map + cross-entropy): much tighter errors."""
    cfg = FusionHeadConfig(kind="avg_pool", model_dim=dim, seed=seed)
    probe = build_probe(cfg, classes, dtype=np.float64)
    if relu_variant:
        from .probe import ProbeModel

        probe = ProbeModel(dim, classes, relu_variant=True, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9B0B]))
    feature = ad.Tensor(rng.normal(size=(dim,)), requires_grad=True, dtype=np.float64)
    target = int(rng.integers(0, classes))
    leaves = [feature] + list(probe.params.values())

    def objective(*_leaves):
        return cross_entropy(probe.logits(feature), target)

    return ad.grad_check(objective, leaves, eps=eps)
