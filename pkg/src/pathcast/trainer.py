"""Training loop: teacher-forced likelihood on deterministic paths plus
REINFORCE with a moving-average baseline on nondeterministic ones.

Per batch the two branches are combined as ``alpha * L_d + beta * L_nd`` and
one Adam step is taken, with a separate learning rate for the encoder
parameters. Samples whose label has at least one deterministic groundtruth
path are trained by teacher forcing over up to ``n_p`` of those paths
(mean/sum pooled, or one random path); samples whose label only has
nondeterministic paths are collected into the policy-gradient index set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import numerics as nm
from .labelgraph import LabelGraph, NodeKind
from .model import InvalidPath, LabelPathModel, NoCandidates, SampledPath
from .numerics import AdamState, Tensor, adam_step
from .pathalg import _certain_members, _split_paths


class EmptyRewardSet(ValueError):
    pass


class LabeledSample(NamedTuple):
    x: np.ndarray
    label: int


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "fixed"  # "fixed" (decay period) or "dynamic" (patience)
    n: int = 10


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_len: int = 8
    r_tf: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    path_agg: str = "mean"  # mean | sum | random
    n_p: int = 4
    reward_set: str = "certain"  # certain | label_only
    baseline_decay: float = 0.9
    lr_e: float = 0.01
    lr: float = 0.01
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    epochs: int = 10
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1 or self.max_len < 2 or self.n_p < 1 or self.epochs < 0:
            raise ValueError("batch_size/max_len/n_p/epochs out of range")
        if not 0.0 <= self.r_tf <= 1.0:
            raise ValueError("r_tf must lie in [0,1]")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.lr <= 0 or self.lr_e <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 < self.baseline_decay < 1.0:
            raise ValueError("baseline_decay must lie in (0,1)")
        if self.path_agg not in ("mean", "sum", "random"):
            raise ValueError(f"unknown path aggregation {self.path_agg!r}")
        if self.reward_set not in ("certain", "label_only"):
            raise ValueError(f"unknown reward set {self.reward_set!r}")
        if self.schedule.kind not in ("fixed", "dynamic") or self.schedule.n < 1:
            raise ValueError("bad schedule")


@dataclass
class Batch:
    """Assembled minibatch: inputs, chosen target paths, PG sample indexes."""

    inputs: np.ndarray
    target_paths: list[list[tuple[int, ...]]]  # per sample; empty => PG-only
    pg_indexes: tuple[int, ...]
    labels: tuple[int, ...] = ()


@dataclass
class BaselineEstimator:
    """Exponential moving average of observed rewards."""

    decay: float = 0.9
    value: float = 0.0

    def update(self, mean_reward: float) -> float:
        self.value = self.decay * self.value + (1.0 - self.decay) * mean_reward
        return self.value


class PathBook:
    """Per-label cache of groundtruth paths, their split and reward sets.

    Works for any target node so coarse fusion targets (which may be
    augmented nodes) get the same treatment as label nodes.
    """

    def __init__(self, graph: LabelGraph):
        self.graph = graph
        self._split: dict[int, tuple[tuple[tuple[int, ...], ...], tuple[tuple[int, ...], ...]]] = {}
        self._certain: dict[int, frozenset[int]] = {}

    def split(self, node: int) -> tuple[tuple[tuple[int, ...], ...], tuple[tuple[int, ...], ...]]:
        if node not in self._split:
            ps = _split_paths(self.graph, node)
            self._split[node] = (ps.deterministic, ps.nondeterministic)
        return self._split[node]

    def deterministic_paths(self, node: int) -> tuple[tuple[int, ...], ...]:
        return self.split(node)[0]

    def reward_members(self, node: int, reward_set: str) -> frozenset[int]:
        if reward_set == "label_only":
            return frozenset({node})
        if node not in self._certain:
            self._certain[node] = _certain_members(self.graph, node)
        return self._certain[node]

    def is_terminal_target(self, node: int) -> bool:
        """Whether EOP must be force-offered when a path ends at this node."""
        return self.graph.node(node).kind is not NodeKind.LABEL


def reward(sampled: Sequence[int] | SampledPath, members: frozenset[int]) -> float:
    """Fraction of the certain-node set covered by the sampled path."""
    if not members:
        raise EmptyRewardSet("reward set is empty")
    tokens = sampled.tokens if isinstance(sampled, SampledPath) else sampled
    return len(set(tokens) & members) / len(members)


# ---------------------------------------------------------------------------
# Deterministic branch (teacher forcing)
# ---------------------------------------------------------------------------

def deterministic_loss(model: LabelPathModel, batch: Batch, cfg: TrainConfig,
                       rng: np.random.Generator,
                       fed_trace: list[list[int]] | None = None) -> Tensor | None:
    """Negative log-likelihood of the batch's target paths, batch-averaged.

    One coin per batch decides the decoder inputs for every step: groundtruth
    tokens when ``coin <= r_tf``, the model's own greedy tokens otherwise.
    The loss always targets the groundtruth token; free-running steps whose
    groundtruth target is no longer reachable from the fed token are excluded,
    as are steps past a lane's EOP. Returns None when no sample carries a
    target path. ``fed_trace`` (when given) collects the per-lane input-token
    streams for inspection.
    """
    lanes: list[tuple[int, list[int]]] = []  # (sample index, target tokens)
    for i, paths in enumerate(batch.target_paths):
        for p in paths:
            targets = list(p) + [model.eop_token]
            lanes.append((i, targets[:cfg.max_len]))
    if not lanes:
        return None
    coin = float(rng.uniform())
    teacher = coin <= cfg.r_tf

    n_lanes = len(lanes)
    max_t = max(len(t) for _, t in lanes)
    features = model.encode(batch.inputs)
    f = nm.gather_rows(features, [s for s, _ in lanes])

    fed = [model.start_token] * n_lanes
    alive = [True] * n_lanes  # feeding still on a usable token
    lane_terms: list[list[Tensor]] = [[] for _ in range(n_lanes)]
    if fed_trace is not None:
        fed_trace.extend([] for _ in range(n_lanes))

    for t in range(max_t):
        f, z = model.decode_logits(f, fed)
        next_fed = list(fed)
        for li, (_, targets) in enumerate(lanes):
            if t >= len(targets) or not alive[li]:
                continue
            if fed_trace is not None:
                fed_trace[li].append(fed[li])
            target = targets[t]
            is_terminal = t == len(targets) - 1 and target == model.eop_token
            try:
                toks, _ = model.candidates(fed[li], offer_eop=is_terminal)
            except (InvalidPath, NoCandidates):
                alive[li] = False
                continue
            if target in toks:
                zrow = nm.take_row(z, li)
                lane_terms[li].append(
                    model.step_log_prob(zrow, fed[li], target, offer_eop=is_terminal))
            if teacher:
                next_fed[li] = target
            else:
                try:
                    next_fed[li] = _greedy_token(model, z.data[li], fed[li])
                except (InvalidPath, NoCandidates):
                    alive[li] = False
                    continue
            if next_fed[li] == model.eop_token:
                alive[li] = False
                next_fed[li] = fed[li]  # frozen; no further loss from this lane
        fed = next_fed

    per_sample: dict[int, list[Tensor]] = {}
    for (si, _), terms in zip(lanes, lane_terms):
        if terms:
            per_sample.setdefault(si, []).append(nm.neg(nm.add_n(terms)))
    if not per_sample:
        return None
    sample_losses = []
    for si, nlls in sorted(per_sample.items()):
        if cfg.path_agg == "mean" and len(nlls) > 1:
            sample_losses.append(nm.scale(nm.add_n(nlls), 1.0 / len(nlls)))
        else:  # sum, random (single lane), or a single path
            sample_losses.append(nlls[0] if len(nlls) == 1 else nm.add_n(nlls))
    return nm.scale(nm.add_n(sample_losses), 1.0 / len(sample_losses))


def _greedy_token(model: LabelPathModel, z_row: np.ndarray, prev: int) -> int:
    toks, blocks = model.candidates(prev)
    zc = z_row[list(toks)]
    probs = np.empty(len(toks))
    for blk in blocks:
        zb = zc[list(blk)]
        e = np.exp(zb - zb.max())
        probs[list(blk)] = e / e.sum()
    return toks[int(np.argmax(probs))]


# ---------------------------------------------------------------------------
# Policy-gradient branch (REINFORCE with baseline)
# ---------------------------------------------------------------------------

def policy_gradient_loss(model: LabelPathModel, batch: Batch,
                         baseline: BaselineEstimator, cfg: TrainConfig,
                         rng: np.random.Generator, book: PathBook
                         ) -> tuple[Tensor | None, list[float]]:
    """Surrogate loss -(r - b) * sum_t log p(chosen_t), meaned over I_pg.

    Each selected sample free-runs one trajectory from START; its reward is
    the certain-node coverage of the emitted path. Rewards and the baseline
    are constants to the differentiator; the baseline is updated with the
    batch-mean reward after its value has been used.
    """
    if not batch.pg_indexes:
        return None, []
    b = baseline.value
    terms: list[Tensor] = []
    rewards: list[float] = []
    for i in batch.pg_indexes:
        members = book.reward_members(batch.labels[i], cfg.reward_set)
        if not members:
            raise EmptyRewardSet(f"no reward nodes for label {batch.labels[i]}")
        sampled = model.sample_path(batch.inputs[i], rng, cfg.max_len)
        r = reward(sampled, members)
        rewards.append(r)
        if sampled.tokens:
            logp = model.sampled_path_log_prob(batch.inputs[i], sampled)
            terms.append(nm.scale(logp, -(r - b)))
    baseline.update(float(np.mean(rewards)))
    if not terms:
        return None, rewards
    return nm.scale(nm.add_n(terms), 1.0 / len(batch.pg_indexes)), rewards


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------

@dataclass
class ScheduleState:
    """Learning-rate halving state; ``scale`` multiplies both initial rates."""

    kind: str
    n: int
    scale: float = 1.0
    best: float | None = None
    stale: int = 0


def schedule_update(state: ScheduleState, epoch: int,
                    dev_metric: float | None = None) -> float:
    """Advance the schedule after ``epoch`` (1-based); returns the new scale.

    fixed(p): halve every p epochs. dynamic(n): halve once the dev metric
    (higher is better) has not improved for n consecutive epochs; the patience
    counter resets on improvement and on each reduction.
    """
    if state.kind == "fixed":
        if epoch % state.n == 0:
            state.scale *= 0.5
    elif state.kind == "dynamic":
        if dev_metric is None:
            raise ValueError("DynamicReduce requires a dev metric")
        if state.best is None or dev_metric > state.best:
            state.best = dev_metric
            state.stale = 0
        else:
            state.stale += 1
            if state.stale >= state.n:
                state.scale *= 0.5
                state.stale = 0
    else:
        raise ValueError(f"unknown schedule kind {state.kind!r}")
    return state.scale


# ---------------------------------------------------------------------------
# Epoch loop
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    adam_enc: AdamState
    adam_rest: AdamState
    baseline: BaselineEstimator
    schedule: ScheduleState
    book: PathBook
    epoch: int = 0

    @staticmethod
    def init(model: LabelPathModel, cfg: TrainConfig) -> "TrainState":
        return TrainState(
            adam_enc=AdamState(lr=cfg.lr_e),
            adam_rest=AdamState(lr=cfg.lr),
            baseline=BaselineEstimator(decay=cfg.baseline_decay),
            schedule=ScheduleState(kind=cfg.schedule.kind, n=cfg.schedule.n),
            book=PathBook(model.graph),
        )


def _batch_rng(seed: int, epoch: int, batch_idx: int) -> np.random.Generator:
    # Stream-split per batch so prefetching batches in parallel stays
    # deterministic.
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(epoch, batch_idx)))


def build_batch(samples: Sequence[LabeledSample], cfg: TrainConfig,
                book: PathBook, rng: np.random.Generator) -> Batch:
    """Select target paths per sample; nondeterministic-only labels go to I_pg."""
    inputs = np.stack([np.asarray(s.x, dtype=np.float64) for s in samples])
    target_paths: list[list[tuple[int, ...]]] = []
    pg: list[int] = []
    labels = tuple(s.label for s in samples)
    for i, s in enumerate(samples):
        det = book.deterministic_paths(s.label)
        if not det:
            pg.append(i)
            target_paths.append([])
        elif cfg.path_agg == "random":
            target_paths.append([det[int(rng.integers(len(det)))]])
        else:
            target_paths.append(list(det[:cfg.n_p]))
    return Batch(inputs=inputs, target_paths=target_paths,
                 pg_indexes=tuple(pg), labels=labels)


def train_epoch(model: LabelPathModel, dataset: Sequence[LabeledSample],
                cfg: TrainConfig, state: TrainState) -> dict:
    """One pass over the dataset; one Adam step per batch. Returns metrics."""
    state.epoch += 1
    epoch = state.epoch
    order_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(epoch,)))
    order = order_rng.permutation(len(dataset))

    enc_names = set(model.encoder_param_names)
    enc_params = {k: v for k, v in model.params.items() if k in enc_names}
    rest_params = {k: v for k, v in model.params.items() if k not in enc_names}

    loss_d_sum = loss_pg_sum = 0.0
    n_d = n_pg = 0
    reward_sum, reward_n = 0.0, 0
    for bi in range(0, len(order), cfg.batch_size):
        chunk = [dataset[j] for j in order[bi:bi + cfg.batch_size]]
        rng = _batch_rng(cfg.seed, epoch, bi // cfg.batch_size)
        batch = build_batch(chunk, cfg, state.book, rng)

        parts: list[Tensor] = []
        ld = deterministic_loss(model, batch, cfg, rng)
        if ld is not None and cfg.alpha != 0.0:
            parts.append(nm.scale(ld, cfg.alpha))
            loss_d_sum += ld.item()
            n_d += 1
        lpg, rewards = (None, [])
        if cfg.beta != 0.0:
            lpg, rewards = policy_gradient_loss(model, batch, state.baseline, cfg, rng, state.book)
        if lpg is not None:
            parts.append(nm.scale(lpg, cfg.beta))
            loss_pg_sum += lpg.item()
            n_pg += 1
        reward_sum += sum(rewards)
        reward_n += len(rewards)
        if not parts:
            continue
        total = parts[0] if len(parts) == 1 else nm.add_n(parts)
        nm.zero_grads(model.params)
        nm.backward(total)
        grads = nm.collect_grads(model.params)
        adam_step(state.adam_enc, enc_params, grads, lr_scale=state.schedule.scale)
        adam_step(state.adam_rest, rest_params, grads, lr_scale=state.schedule.scale)

    return {
        "epoch": epoch,
        "loss_d": loss_d_sum / n_d if n_d else 0.0,
        "loss_pg": loss_pg_sum / n_pg if n_pg else 0.0,
        "mean_reward": reward_sum / reward_n if reward_n else None,
        "baseline": state.baseline.value,
        "lr": cfg.lr * state.schedule.scale,
        "lr_e": cfg.lr_e * state.schedule.scale,
    }


def train(model: LabelPathModel, train_set: Sequence[LabeledSample],
          cfg: TrainConfig, dev_set: Sequence[LabeledSample] | None = None,
          metrics_path: str | None = None) -> list[dict]:
    """Full training run; appends one JSON line of metrics per epoch."""
    from .evaldecode import evaluate  # local import, avoids a module cycle

    cfg.validate()
    if cfg.schedule.kind == "dynamic" and dev_set is None:
        raise ValueError("DynamicReduce schedule needs a dev set")
    state = TrainState.init(model, cfg)
    sink = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    records = []
    try:
        for _ in range(cfg.epochs):
            rec = train_epoch(model, train_set, cfg, state)
            dev_acc = None
            if dev_set:
                dev_acc = evaluate(model, dev_set, cfg.max_len).accuracy
            rec["dev_accuracy"] = dev_acc
            schedule_update(state.schedule, state.epoch, dev_acc)
            rec["next_lr"] = cfg.lr * state.schedule.scale
            records.append(rec)
            if sink:
                sink.write(json.dumps(rec, sort_keys=True) + "\n")
                sink.flush()
    finally:
        if sink:
            sink.close()
    return records
