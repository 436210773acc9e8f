"""Greedy decoding and evaluation: accuracy, macro-F1, and the audit of
nondeterministic attribute choices against per-instance ground truth."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .labelgraph import LabelGraph, NodeKind
from .model import LabelPathModel, NoCandidates, greedy_choice
from .pathalg import all_paths_to


class EmptyDataset(ValueError):
    pass


class NoAuditableSamples(ValueError):
    pass


@dataclass(frozen=True)
class DecodedResult:
    """One greedy decode: visited graph nodes, stop reason, per-step probs."""

    path: tuple[int, ...]
    terminated_by: str  # "eop" | "max_len"
    predicted_label: int | None
    step_probs: tuple[float, ...]


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    path_correctness: float | None = None
    per_class: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "path_correctness": self.path_correctness,
            "per_class": {k: self.per_class[k] for k in sorted(self.per_class)},
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def greedy_decode(model: LabelPathModel, x: np.ndarray, max_len: int) -> DecodedResult:
    """Walk the graph from START taking the most probable candidate each step.

    The choice is the global maximum across the candidate blocks, ties going
    to the lowest token id; stops at EOP or after ``max_len`` steps.
    """
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    f = model.encode(x)
    prev = model.start_token
    path: list[int] = []
    probs: list[float] = []
    terminated = "max_len"
    for _ in range(max_len):
        try:
            dist, f = model.step(f, prev)
        except NoCandidates:
            break  # dead-end augmented node; scored like a truncation
        tok, p = greedy_choice(dist)
        probs.append(p)
        if tok == model.eop_token:
            terminated = "eop"
            break
        path.append(tok)
        prev = tok
    return DecodedResult(path=tuple(path), terminated_by=terminated,
                         predicted_label=extract_label(model.graph, tuple(path)),
                         step_probs=tuple(probs))


def extract_label(graph: LabelGraph, path: Sequence[int] | DecodedResult) -> int | None:
    """Last label-kind node on a decoded path, or None when there is none."""
    nodes = path.path if isinstance(path, DecodedResult) else path
    label = None
    for node in nodes:
        if graph.node(node).kind is NodeKind.LABEL:
            label = node
    return label


def evaluate(model: LabelPathModel, dataset: Sequence, max_len: int) -> MetricsReport:
    """Exact-match accuracy and macro-F1 of decoded labels over a dataset.

    ``dataset`` yields (x, label_id) pairs. A decode without any label node
    counts as incorrect. Macro-F1 averages per-class F1 over the classes
    present in the gold labels; the per-class table also records predictions
    that fall outside that set so micro-F1 stays recomputable.
    """
    samples = list(dataset)
    if not samples:
        raise EmptyDataset("cannot evaluate an empty dataset")
    counts: dict[int, dict[str, int]] = {}

    def cell(label: int) -> dict[str, int]:
        return counts.setdefault(label, {"tp": 0, "fp": 0, "fn": 0, "support": 0})

    correct = 0
    for x, gold in samples:
        pred = greedy_decode(model, x, max_len).predicted_label
        cell(gold)["support"] += 1
        if pred == gold:
            correct += 1
            cell(gold)["tp"] += 1
        else:
            cell(gold)["fn"] += 1
            if pred is not None:
                cell(pred)["fp"] += 1
    gold_classes = [c for c, v in counts.items() if v["support"] > 0]
    f1s = []
    for c in gold_classes:
        v = counts[c]
        denom = 2 * v["tp"] + v["fp"] + v["fn"]
        f1s.append(2 * v["tp"] / denom if denom else 0.0)
    graph = model.graph
    per_class = {graph.node(c).name: counts[c] for c in counts}
    return MetricsReport(accuracy=correct / len(samples),
                         macro_f1=float(np.mean(f1s)) if f1s else 0.0,
                         per_class=per_class)


def nondeterministic_groups(graph: LabelGraph, label: int) -> dict[str, set[int]]:
    """Groups whose member choice is not fixed by the label.

    For each competing group, collect the members appearing on any
    groundtruth path of the label; a group with two or more such members is
    a nondeterministic choice for that label.
    """
    seen: dict[str, set[int]] = {}
    for p in all_paths_to(graph, label):
        for node in p:
            g = graph.group_of(node)
            if g is not None:
                seen.setdefault(g.name, set()).add(node)
    return {name: members for name, members in seen.items() if len(members) >= 2}


def audit_nondeterministic(model: LabelPathModel, dataset: Sequence,
                           max_len: int) -> float:
    """Fraction of decoded nondeterministic attribute choices that match the
    instance's true attribute.

    ``dataset`` yields (x, label_id, attrs) triples where ``attrs`` maps a
    group name to the true member node name. Only decode steps through a
    group that is nondeterministic for the sample's label are audited.
    """
    graph = model.graph
    nd_cache: dict[int, dict[str, set[int]]] = {}
    audited = matches = 0
    for x, gold, attrs in dataset:
        if not attrs:
            continue
        if gold not in nd_cache:
            nd_cache[gold] = nondeterministic_groups(graph, gold)
        nd_groups = nd_cache[gold]
        if not nd_groups:
            continue
        result = greedy_decode(model, x, max_len)
        for node in result.path:
            g = graph.group_of(node)
            if g is None or g.name not in nd_groups:
                continue
            true_member = attrs.get(g.name)
            if true_member is None:
                continue
            audited += 1
            if graph.node(node).name == true_member:
                matches += 1
    if audited == 0:
        raise NoAuditableSamples("no decoded nondeterministic group traversals")
    return matches / audited
