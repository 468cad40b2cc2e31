"""Cost accounting, accuracy/convergence instrumentation, and metric emission.

Parameter counts treat a model as "retained weights + retained biases";
FLOPs count retained weight-matrix entries (one multiply-accumulate each,
bias adds excluded) - the only definition that reproduces the full-MLP
pair (159010, 158800) for the 784-200-10 network.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .nn import LayerLayout, ParamVector, dataset_loss_and_grad, evaluate
from .pruning import Mask, PruningPolicy, default_maskable_set

CSV_HEADER = [
    "round",
    "loss",
    "acc_global",
    "acc_local",
    "gamma_min",
    "delta_sq_mean",
    "grad_norm_sq",
    "params_amortized",
    "flops_amortized",
]


@dataclass(frozen=True)
class ModelAccount:
    params_total: int
    flops_total: int


@dataclass(frozen=True)
class AmortizedAccount:
    params_mean: float
    flops_mean: float
    params_ratio: float  # vs full model, rounded to 2 decimals
    flops_ratio: float


@dataclass
class RoundMetrics:
    round: int
    global_loss: float
    global_accuracy: float
    local_weighted_accuracy: float
    gamma_min: int
    per_slot_delta_sq: tuple[float, ...]
    grad_norm_sq_estimate: float
    amortized_params: float
    amortized_flops: float
    mask_sparsities: tuple[float, ...] = ()

    @property
    def delta_sq_mean(self) -> float:
        if not self.per_slot_delta_sq:
            return 0.0
        return float(np.mean(self.per_slot_delta_sq))


@dataclass(frozen=True)
class TheoryConstants:
    """User-supplied constants for the convergence-bound calculators.

    These are unobservable in general; the calculators are calculators,
    not estimators.
    """

    L: float
    G: float
    sigma_sq: float
    K: float
    N: float
    T: float
    Q: float
    gamma_star: float
    delta_sq: float
    avg_theta_norm_sq: float
    f0: float  # expected initial loss E[F(theta_0)]

    def __post_init__(self):
        for name in ("L", "G", "K", "N", "T", "Q", "f0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_sq < 0 or self.avg_theta_norm_sq < 0:
            raise ValueError("sigma_sq and avg_theta_norm_sq must be non-negative")
        if not 0.0 <= self.delta_sq < 1.0:
            raise ValueError("delta_sq must lie in [0, 1)")
        if self.gamma_star <= 0:
            raise ValueError("gamma_star must be positive")


# ---------------------------------------------------------------------------
# Parameter / FLOP accounting
# ---------------------------------------------------------------------------


def full_account(layout: LayerLayout) -> ModelAccount:
    weights = sum(sl.weight_len for sl in layout.offsets)
    return ModelAccount(layout.total, weights)


def account(layout: LayerLayout, mask_or_policy) -> ModelAccount:
    """Retained (params, flops) for a concrete mask or an analytic policy."""
    full = full_account(layout)
    if isinstance(mask_or_policy, Mask):
        bits = mask_or_policy.bits
        if len(bits) != layout.total:
            raise ValueError("mask length does not match layout")
        params = int(bits.sum())
        flops = int(bits[layout.weight_mask()].sum())
        return ModelAccount(params, flops)
    if isinstance(mask_or_policy, PruningPolicy):
        policy = mask_or_policy
        dropped = frozenset({1, 2, 3, 4}) - policy.kept_segments
        if policy.family == "WP":
            m = len(default_maskable_set(layout, "WP"))
            sizes = [len(part) for part in np.array_split(np.arange(m), 4)]
            cut = sum(sizes[s - 1] for s in dropped)
            return ModelAccount(full.params_total - cut, full.flops_total - cut)
        # NP/FS: whole hidden neurons go; params lose in+1+out, flops in+out each
        if len(layout.layer_sizes) != 3:
            raise ValueError("neuron-structured accounting needs exactly one hidden layer")
        d_in, hidden, d_out = layout.layer_sizes
        sizes = [len(part) for part in np.array_split(np.arange(hidden), 4)]
        cut_neurons = sum(sizes[s - 1] for s in dropped)
        return ModelAccount(
            full.params_total - cut_neurons * (d_in + 1 + d_out),
            full.flops_total - cut_neurons * (d_in + d_out),
        )
    raise TypeError(f"expected Mask or PruningPolicy, got {type(mask_or_policy)!r}")


def amortized(accounts: list[ModelAccount], full: ModelAccount) -> AmortizedAccount:
    """Mean retained cost across a round's local models, plus ratios vs full."""
    if not accounts:
        raise ValueError("need at least one slot account")
    p = float(np.mean([a.params_total for a in accounts]))
    f = float(np.mean([a.flops_total for a in accounts]))
    return AmortizedAccount(p, f, round(p / full.params_total, 2), round(f / full.flops_total, 2))


# ---------------------------------------------------------------------------
# Accuracy and gradient instrumentation
# ---------------------------------------------------------------------------


def weighted_accuracy(per_client: list[tuple[float, ParamVector, object]],
                      batch_size: int = 128) -> float:
    """Weighted mean of per-client accuracies, each on that client's own data.

    Entries are (weight, already-masked params, dataset); weights must sum to 1.
    """
    weights = [w for w, _, _ in per_client]
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError(f"client weights must sum to 1, got {sum(weights)}")
    total = 0.0
    for w, params, dataset in per_client:
        _, acc = evaluate(params, None, dataset, batch_size=batch_size)
        total += w * acc
    return total


def grad_norm_estimate(params: ParamVector, dataset, batch_size: int = 128) -> float:
    """Squared L2 norm of the full-batch gradient of the mean loss."""
    _, grad = dataset_loss_and_grad(
        params, np.asarray(dataset.inputs, dtype=np.float64),
        np.asarray(dataset.labels, dtype=np.int64), batch_size=batch_size,
    )
    return float(grad @ grad)


# ---------------------------------------------------------------------------
# Convergence-bound calculators
# ---------------------------------------------------------------------------


def theorem1_rhs(c: TheoryConstants, variant: str = "main") -> float:
    """IID bound: G0/sqrt(TQ) + V0/Q + (I0/gamma*) * delta^2 * avg||theta||^2.

    `variant="alt"` divides the V0 term by sqrt(Q) instead of Q; both
    readings of the bound circulate and neither is endorsed here.
    """
    if variant not in ("main", "alt"):
        raise ValueError("variant must be 'main' or 'alt'")
    g0 = 4.0 * c.f0 + 6.0 * c.L * c.N * c.sigma_sq / c.gamma_star**2
    v0 = 3.0 * c.L**2 * c.N * c.G / c.gamma_star
    i0 = 3.0 * c.L**2 * c.N
    second = v0 / c.Q if variant == "main" else v0 / math.sqrt(c.Q)
    return g0 / math.sqrt(c.T * c.Q) + second + (i0 / c.gamma_star) * c.delta_sq * c.avg_theta_norm_sq


def theorem2_rhs(c: TheoryConstants, variant: str = "main") -> float:
    """Non-IID bound: H0/sqrt(TQ) + U0/Q + sigma^2 * I0 * avg||theta||^2.

    `variant="alt"` keeps the coverage divisors and noise weighting of
    the IID form: H0/sqrt(TQ) + V0/sqrt(Q)
    + (I0/gamma*) * delta^2 * avg||theta||^2.
    """
    if variant not in ("main", "alt"):
        raise ValueError("variant must be 'main' or 'alt'")
    h0 = 4.0 * c.f0 + 6.0 * c.L * c.K * c.sigma_sq
    i0 = 3.0 * c.L**2 * c.N
    if variant == "main":
        u0 = 3.0 * c.L**2 * c.N * c.G
        return h0 / math.sqrt(c.T * c.Q) + u0 / c.Q + c.sigma_sq * i0 * c.avg_theta_norm_sq
    v0 = 3.0 * c.L**2 * c.N * c.G / c.gamma_star
    return (
        h0 / math.sqrt(c.T * c.Q)
        + v0 / math.sqrt(c.Q)
        + (i0 / c.gamma_star) * c.delta_sq * c.avg_theta_norm_sq
    )


def theory_learning_rate(T: int, Q: int, L: float | None = None) -> float:
    """Analysis-mode step size 1/sqrt(TQ), capped at 1/(6LT) when L is known."""
    gamma = 1.0 / math.sqrt(T * Q)
    if L is not None:
        gamma = min(gamma, 1.0 / (6.0 * L * T))
    return gamma


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _record_row(r: RoundMetrics) -> dict:
    return {
        "round": r.round,
        "loss": r.global_loss,
        "acc_global": r.global_accuracy,
        "acc_local": r.local_weighted_accuracy,
        "gamma_min": r.gamma_min,
        "delta_sq_mean": r.delta_sq_mean,
        "grad_norm_sq": r.grad_norm_sq_estimate,
        "params_amortized": r.amortized_params,
        "flops_amortized": r.amortized_flops,
    }


def emit_csv(records: list[RoundMetrics], sink) -> None:
    """Fixed-header CSV; floats at 17 significant digits (exact round-trip)."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        row = _record_row(r)
        writer.writerow(
            [row["round"]]
            + [_fmt(row[k]) for k in CSV_HEADER[1:4]]
            + [row["gamma_min"]]
            + [_fmt(row[k]) for k in CSV_HEADER[5:]]
        )


def emit_jsonl(records: list[RoundMetrics], sink) -> None:
    for r in records:
        row = _record_row(r)
        sink.write(json.dumps({k: row[k] for k in CSV_HEADER}) + "\n")


def emit(records: list[RoundMetrics], csv_sink, jsonl_sink=None) -> None:
    """Write the CSV stream and, when given a second sink, the JSON-lines twin."""
    emit_csv(records, csv_sink)
    if jsonl_sink is not None:
        emit_jsonl(records, jsonl_sink)


def read_metrics_csv(source) -> list[dict]:
    """Parse an emitted CSV back into typed rows (round-trip oracle)."""
    reader = csv.DictReader(source)
    if reader.fieldnames != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    out = []
    for row in reader:
        parsed = {k: float(row[k]) for k in CSV_HEADER}
        parsed["round"] = int(row["round"])
        parsed["gamma_min"] = int(row["gamma_min"])
        out.append(parsed)
    return out
