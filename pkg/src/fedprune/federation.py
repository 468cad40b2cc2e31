"""Round engine: client sampling, masked local SGD, region-wise aggregation.

Each round q (1-based):
  1. sample floor(c*N) participants; slot k follows codename digit k
  2. generate each slot's mask from the current global model (or reuse a
     frozen one), prune, and run T local epochs of masked SGD
  3. group parameter indices into regions by their exact coverage
     signature and average each region over exactly its covering slots
Regions covered by no slot keep the previous global value; that case is
reported as gamma_min = 0 and can be escalated to an error.

Determinism: all randomness flows from named streams derived from
(seed, stream, round[, slot]), so parallel slot execution would reproduce
sequential results bit for bit. Region sums always run in ascending slot
order for the same reason.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, PartitionSpec, load_idx, partition, stratified_subset, synth_blobs
from .metrics import (
    RoundMetrics,
    account,
    amortized,
    full_account,
    grad_norm_estimate,
    theory_learning_rate,
    weighted_accuracy,
)
from .nn import Batch, LayerLayout, OptimizerState, ParamVector, evaluate, init_params, loss_and_grad, masked_sgd_step
from .pruning import (
    Mask,
    PolicyAssignment,
    apply_mask,
    default_maskable_set,
    generate_mask,
    parse_codename,
    pruning_noise,
)

# named RNG streams; keep stable or recorded runs stop being reproducible
_SAMPLE_STREAM = 1
_LOCAL_STREAM = 2


class CoverageError(RuntimeError):
    """A parameter region was covered by zero participants."""


# ---------------------------------------------------------------------------
# Regions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    signature: frozenset[int]  # participating slots whose mask covers these indices
    indices: np.ndarray


@dataclass(frozen=True)
class RegionPartition:
    regions: tuple[Region, ...]
    size: int


@dataclass(frozen=True)
class CoverageReport:
    per_region_count: tuple[int, ...]
    gamma_min: int


def decompose_regions(masks: list[Mask]) -> RegionPartition:
    """Group every parameter index by the exact set of slots covering it."""
    if not masks:
        raise ValueError("need at least one mask")
    length = len(masks[0])
    if any(len(m) != length for m in masks):
        raise ValueError("masks differ in length")
    bits = np.stack([m.bits for m in masks])
    signatures, inverse = np.unique(bits.T, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    regions = tuple(
        Region(frozenset(np.flatnonzero(signatures[r]).tolist()), np.flatnonzero(inverse == r))
        for r in range(len(signatures))
    )
    return RegionPartition(regions, length)


def coverage_index(partition_: RegionPartition) -> CoverageReport:
    counts = tuple(len(r.signature) for r in partition_.regions)
    return CoverageReport(counts, min(counts))


def aggregate(
    previous_global: ParamVector,
    local_models: list[ParamVector],
    masks: list[Mask],
    partition_: RegionPartition,
) -> ParamVector:
    """Region-wise mean over exactly the covering slots, in ascending slot order.

    Uncovered regions retain the previous global value.
    """
    total = previous_global.layout.total
    if partition_.size != total:
        raise ValueError("partition does not match the parameter vector")
    if len(local_models) != len(masks):
        raise ValueError("one mask per local model required")
    covered = sum(len(r.signature) * len(r.indices) for r in partition_.regions)
    if covered != sum(int(m.bits.sum()) for m in masks):
        raise ValueError("partition is inconsistent with the masks")
    out = previous_global.values.copy()
    for region in partition_.regions:
        if not region.signature:
            continue
        acc = np.zeros(len(region.indices))
        for slot in sorted(region.signature):
            acc += local_models[slot].values[region.indices]
        out[region.indices] = acc / len(region.signature)
    return ParamVector(out, previous_global.layout)


# ---------------------------------------------------------------------------
# Configuration and state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 10
    samples_per_class: int = 100
    dim: int = 20
    spread: float = 0.3
    test_samples_per_class: int = 50
    data_seed: int = 0  # dataset is shared across run seeds, like real files


@dataclass(frozen=True)
class IdxSpec:
    train_images: str
    train_labels: str
    test_images: str
    test_labels: str
    train_subset: int | None = None
    test_subset: int | None = None
    subset_seed: int = 0


@dataclass(frozen=True)
class FederationConfig:
    codename: str
    dataset: SynthSpec | IdxSpec = field(default_factory=SynthSpec)
    num_clients: int = 100
    participation_ratio: float = 0.1
    rounds: int = 100
    local_epochs: int = 5
    local_batch: int = 10
    learning_rate: float | None = None  # None -> 1/sqrt(T*Q), capped by smoothness_L
    momentum: float = 0.5
    family: str = "WP"
    freeze_after_round: int | None = None
    seed: int = 0
    init_seed: int = 0  # one starting model shared across run seeds
    partition: str = "iid"
    classes_per_client: int = 2
    uncovered_region_action: str = "warn"
    hidden_layers: tuple[int, ...] = (200,)
    test_batch: int = 128
    loss_split: str = "test"
    static_slots: bool = False
    smoothness_L: float | None = None

    def __post_init__(self):
        if not 0.0 < self.participation_ratio <= 1.0:
            raise ValueError("participation_ratio must be in (0, 1]")
        if self.slots_per_round < 1:
            raise ValueError("participation_ratio * num_clients must be at least 1")
        if self.slots_per_round != len(self.codename):
            raise ValueError(
                f"codename length {len(self.codename)} must equal floor(c*N) = {self.slots_per_round}"
            )
        if self.rounds < 0 or self.local_epochs < 1 or self.local_batch < 1:
            raise ValueError("rounds must be >= 0; local_epochs and local_batch >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.uncovered_region_action not in ("warn", "error"):
            raise ValueError("uncovered_region_action must be 'warn' or 'error'")
        if self.loss_split not in ("test", "train"):
            raise ValueError("loss_split must be 'test' or 'train'")
        if self.static_slots and self.num_clients != self.slots_per_round:
            raise ValueError("static slot binding requires num_clients == codename length")
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        parse_codename(self.codename, self.family, self.freeze_after_round)  # validates

    @property
    def slots_per_round(self) -> int:
        # floor(c*N) with a guard against float dust (0.29 * 100 == 28.999...)
        return int(self.participation_ratio * self.num_clients + 1e-9)

    @property
    def effective_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return theory_learning_rate(self.local_epochs, max(self.rounds, 1), self.smoothness_L)


@dataclass(frozen=True)
class FederatedData:
    train: Dataset
    shards: tuple[np.ndarray, ...]
    test: Dataset


@dataclass(frozen=True)
class GlobalState:
    round: int  # completed rounds
    params: ParamVector
    frozen_masks: dict[int, Mask]
    seed: int


# ---------------------------------------------------------------------------
# Data and state construction
# ---------------------------------------------------------------------------


def build_federated_data(config: FederationConfig) -> FederatedData:
    spec = config.dataset
    if isinstance(spec, SynthSpec):
        train = synth_blobs(
            spec.num_classes, spec.samples_per_class, spec.dim, spec.spread, spec.data_seed
        )
        test = synth_blobs(
            spec.num_classes, spec.test_samples_per_class, spec.dim, spec.spread,
            spec.data_seed + 1,
        )
    else:
        train = load_idx(spec.train_images, spec.train_labels)
        test = load_idx(spec.test_images, spec.test_labels, num_classes=train.num_classes)
        if spec.train_subset is not None:
            train = stratified_subset(train, spec.train_subset, spec.subset_seed)
        if spec.test_subset is not None:
            test = stratified_subset(test, spec.test_subset, spec.subset_seed + 1)
    shards = partition(
        train,
        PartitionSpec(config.partition, config.num_clients, config.classes_per_client, config.seed),
    )
    return FederatedData(train, tuple(shards), test)


def model_layout(config: FederationConfig, data: FederatedData) -> LayerLayout:
    return LayerLayout((data.train.num_features, *config.hidden_layers, data.train.num_classes))


def init_state(config: FederationConfig, layout: LayerLayout) -> GlobalState:
    return GlobalState(0, init_params(layout, config.init_seed), {}, config.seed)


def local_rng(seed: int, round_no: int, slot: int) -> np.random.Generator:
    return np.random.default_rng([seed, _LOCAL_STREAM, round_no, slot])


def sample_rng(seed: int, round_no: int) -> np.random.Generator:
    return np.random.default_rng([seed, _SAMPLE_STREAM, round_no])


# ---------------------------------------------------------------------------
# Algorithm steps
# ---------------------------------------------------------------------------


def sample_participants(state: GlobalState, config: FederationConfig) -> list[int]:
    """floor(c*N) distinct clients for the upcoming round; slot k <-> digit k."""
    m = config.slots_per_round
    if config.static_slots:
        return list(range(m))
    rng = sample_rng(state.seed, state.round + 1)
    return [int(i) for i in rng.choice(config.num_clients, size=m, replace=False)]


def local_update(
    global_params: ParamVector,
    mask: Mask,
    shard: Dataset,
    config: FederationConfig,
    rng: np.random.Generator,
) -> ParamVector:
    """T epochs of masked minibatch SGD starting from the pruned global model."""
    if len(shard) == 0:
        raise ValueError("client shard is empty")
    params = apply_mask(global_params, mask)
    opt = OptimizerState.fresh(
        global_params.layout, config.effective_learning_rate, config.momentum
    )
    n = len(shard)
    for _ in range(config.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.local_batch):
            idx = order[start : start + config.local_batch]
            _, grad = loss_and_grad(params, Batch(shard.inputs[idx], shard.labels[idx]))
            params, opt = masked_sgd_step(params, grad, mask, opt)
    return params


def run_round(
    state: GlobalState, config: FederationConfig, data: FederatedData
) -> tuple[GlobalState, RoundMetrics]:
    """One full round: sample, mask, train, decompose, aggregate, measure."""
    q = state.round + 1
    layout = state.params.layout
    assignment: PolicyAssignment = parse_codename(
        config.codename, config.family, config.freeze_after_round
    )
    maskable = default_maskable_set(layout, config.family)
    participants = sample_participants(state, config)

    frozen = dict(state.frozen_masks)
    masks: list[Mask] = []
    deltas: list[float] = []
    for k in range(len(participants)):
        policy = assignment.per_slot_policies[k]
        mask = generate_mask(policy, state.params, maskable, q, frozen.get(k))
        if (
            policy.freeze_after_round is not None
            and q >= policy.freeze_after_round
            and k not in frozen
        ):
            frozen[k] = mask
        masks.append(mask)
        deltas.append(pruning_noise(state.params, mask))

    local_models = []
    shards = []
    for k, client in enumerate(participants):
        shard = data.train.subset(data.shards[client])
        shards.append(shard)
        local_models.append(
            local_update(state.params, masks[k], shard, config, local_rng(state.seed, q, k))
        )

    partition_ = decompose_regions(masks)
    report = coverage_index(partition_)
    if report.gamma_min == 0:
        message = f"round {q}: some parameters are covered by no participant (gamma_min = 0)"
        if config.uncovered_region_action == "error":
            raise CoverageError(message)
        warnings.warn(message)

    new_params = aggregate(state.params, local_models, masks, partition_)
    if not np.isfinite(new_params.values).all():
        raise FloatingPointError(f"round {q}: non-finite global parameters after aggregation")

    eval_split = data.test if config.loss_split == "test" else data.train
    loss, acc = evaluate(new_params, None, eval_split, batch_size=config.test_batch)
    gnorm = grad_norm_estimate(new_params, data.test, batch_size=config.test_batch)
    n_slots = len(participants)
    local_acc = weighted_accuracy(
        [(1.0 / n_slots, local_models[k], shards[k]) for k in range(n_slots)],
        batch_size=config.test_batch,
    )
    amort = amortized([account(layout, m) for m in masks], full_account(layout))

    new_state = GlobalState(q, new_params, frozen, state.seed)
    record = RoundMetrics(
        round=q,
        global_loss=loss,
        global_accuracy=acc,
        local_weighted_accuracy=local_acc,
        gamma_min=report.gamma_min,
        per_slot_delta_sq=tuple(deltas),
        grad_norm_sq_estimate=gnorm,
        amortized_params=amort.params_mean,
        amortized_flops=amort.flops_mean,
        mask_sparsities=tuple(m.sparsity for m in masks),
    )
    return new_state, record


def run(
    config: FederationConfig, data: FederatedData | None = None
) -> tuple[list[RoundMetrics], ParamVector]:
    """Q rounds from a fresh model; deterministic for a given config and seed."""
    if data is None:
        data = build_federated_data(config)
    state = init_state(config, model_layout(config, data))
    history: list[RoundMetrics] = []
    for _ in range(config.rounds):
        state, record = run_round(state, config, data)
        history.append(record)
    return history, state.params
