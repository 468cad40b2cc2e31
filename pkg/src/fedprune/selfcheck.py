"""Randomized self-checks of the numerical core against brute-force oracles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .federation import aggregate, decompose_regions
from .nn import Batch, LayerLayout, OptimizerState, ParamVector, loss_and_grad, masked_sgd_step
from .pruning import Mask, apply_mask


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _finite_difference_grad(params: ParamVector, batch: Batch, h: float = 1e-6) -> np.ndarray:
    grad = np.zeros(params.layout.total)
    values = params.values
    for i in range(len(values)):
        bumped = values.copy()
        bumped[i] = values[i] + h
        up, _ = loss_and_grad(ParamVector(bumped, params.layout), batch)
        bumped[i] = values[i] - h
        down, _ = loss_and_grad(ParamVector(bumped, params.layout), batch)
        grad[i] = (up - down) / (2.0 * h)
    return grad


def gradient_check(rng: np.random.Generator, runs: int = 20,
                   corrupt: bool = False) -> CheckResult:
    """Backprop vs central finite differences on random small nets."""
    worst = 0.0
    for _ in range(runs):
        sizes = [int(rng.integers(2, 6)) for _ in range(int(rng.integers(2, 4)))]
        layout = LayerLayout(tuple(sizes))
        params = ParamVector(rng.normal(0.0, 1.0, layout.total), layout)
        n = int(rng.integers(1, 6))
        batch = Batch(rng.normal(0.0, 1.0, (n, sizes[0])), rng.integers(0, sizes[-1], n))
        _, analytic = loss_and_grad(params, batch)
        if corrupt:
            analytic = analytic + 1e-3
        numeric = _finite_difference_grad(params, batch)
        scale = max(float(np.abs(numeric).max()), 1.0)
        worst = max(worst, float(np.abs(analytic - numeric).max()) / scale)
    passed = worst < 1e-5
    return CheckResult("gradient_finite_difference", passed, f"max relative error {worst:.3g}")


def _brute_force_aggregate(prev: np.ndarray, locals_: list[np.ndarray],
                           bits: np.ndarray) -> np.ndarray:
    out = prev.copy()
    for i in range(len(prev)):
        covering = [s for s in range(len(locals_)) if bits[s, i] == 1]
        if covering:
            out[i] = sum(locals_[s][i] for s in covering) / len(covering)
    return out


def _random_instance(rng: np.random.Generator):
    n_params = int(rng.integers(2, 65))
    n_slots = int(rng.integers(1, 7))
    bits = rng.integers(0, 2, (n_slots, n_params), dtype=np.uint8)
    return n_params, n_slots, bits


def region_partition_check(rng: np.random.Generator, runs: int = 200) -> CheckResult:
    """decompose_regions vs a per-index signature scan."""
    for _ in range(runs):
        n_params, n_slots, bits = _random_instance(rng)
        masks = [Mask(bits[s]) for s in range(n_slots)]
        part = decompose_regions(masks)
        seen = np.zeros(n_params, dtype=int)
        for region in part.regions:
            seen[region.indices] += 1
            for i in region.indices:
                expected = frozenset(int(s) for s in range(n_slots) if bits[s, i] == 1)
                if expected != region.signature:
                    return CheckResult(
                        "region_partition_oracle", False,
                        f"index {i}: signature {region.signature} != {expected}",
                    )
        if not (seen == 1).all():
            return CheckResult("region_partition_oracle", False, "not an exact partition")
    return CheckResult("region_partition_oracle", True, f"{runs} random instances")


def aggregation_check(rng: np.random.Generator, runs: int = 200) -> CheckResult:
    """aggregate vs the per-index 'mean over covering slots' loop."""
    for _ in range(runs):
        n_params, n_slots, bits = _random_instance(rng)
        layout = _flat_layout(n_params)
        prev = rng.normal(0.0, 1.0, n_params)
        locals_ = [rng.normal(0.0, 1.0, n_params) for _ in range(n_slots)]
        masks = [Mask(bits[s]) for s in range(n_slots)]
        got = aggregate(
            ParamVector(prev, layout),
            [ParamVector(v, layout) for v in locals_],
            masks,
            decompose_regions(masks),
        ).values
        want = _brute_force_aggregate(prev, locals_, bits)
        if not np.array_equal(got, want):
            return CheckResult(
                "aggregation_oracle", False,
                f"max deviation {np.abs(got - want).max():.3g}",
            )
    return CheckResult("aggregation_oracle", True, f"{runs} random instances")


def mask_closure_check(rng: np.random.Generator, runs: int = 50) -> CheckResult:
    """Masked-out coordinates stay bitwise zero through SGD sequences."""
    for _ in range(runs):
        sizes = (int(rng.integers(2, 5)), int(rng.integers(2, 5)), int(rng.integers(2, 4)))
        layout = LayerLayout(sizes)
        mask = Mask(rng.integers(0, 2, layout.total, dtype=np.uint8))
        params = apply_mask(ParamVector(rng.normal(0.0, 1.0, layout.total), layout), mask)
        opt = OptimizerState.fresh(layout, learning_rate=0.1, momentum_coef=0.5)
        batch = Batch(rng.normal(0.0, 1.0, (4, sizes[0])), rng.integers(0, sizes[-1], 4))
        for _ in range(10):
            _, grad = loss_and_grad(params, batch)
            params, opt = masked_sgd_step(params, grad, mask, opt)
            off = mask.bits == 0
            if params.values[off].any() or opt.momentum_buffer[off].any():
                return CheckResult("mask_closure", False, "pruned coordinate moved off zero")
    return CheckResult("mask_closure", True, f"{runs} random trajectories, 10 steps each")


def _flat_layout(n_params: int) -> LayerLayout:
    """A layout whose flat vector has exactly n_params entries.

    Aggregation and region logic only need vector length, so a single
    (n-1)-to-1 affine layer ((n-1) weights + 1 bias) suffices.
    """
    if n_params < 2:
        raise ValueError("flat layouts need at least 2 parameters")
    return LayerLayout((n_params - 1, 1))


def run_selfcheck(seed: int = 0, corrupt_gradient: bool = False) -> list[CheckResult]:
    results = [
        gradient_check(np.random.default_rng([seed, 10]), corrupt=corrupt_gradient),
        region_partition_check(np.random.default_rng([seed, 11])),
        aggregation_check(np.random.default_rng([seed, 12])),
        mask_closure_check(np.random.default_rng([seed, 13])),
    ]
    return results
