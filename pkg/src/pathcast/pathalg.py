"""Root-to-label path enumeration, deterministic/nondeterministic split,
and the certain-node set used by the policy-gradient reward.

A groundtruth path is *nondeterministic* when some other groundtruth path for
the same label carries a different member of the same competing group: the
annotation alone cannot tell which branch the instance took. Everything here
is a pure function over an immutable graph; results may be cached freely.
"""

from __future__ import annotations

from dataclasses import dataclass

from .labelgraph import LabelGraph, NodeKind


class NotALabelNode(ValueError):
    pass


@dataclass(frozen=True)
class PathSet:
    """All simple root-to-label paths for one label, split by determinism."""

    label: int
    deterministic: tuple[tuple[int, ...], ...]
    nondeterministic: tuple[tuple[int, ...], ...]

    def all_paths(self) -> tuple[tuple[int, ...], ...]:
        return tuple(sorted(self.deterministic + self.nondeterministic))


@dataclass(frozen=True)
class CertainNodeSet:
    """Nodes guaranteed correct for a label: on every groundtruth path."""

    label: int
    members: frozenset[int]


def _require_label(graph: LabelGraph, node_id: int) -> None:
    if not 0 <= node_id < len(graph.nodes):
        raise NotALabelNode(f"node {node_id} does not exist")
    if graph.node(node_id).kind is not NodeKind.LABEL:
        raise NotALabelNode(f"node {graph.node(node_id).name!r} is not a label node")


def all_paths_to(graph: LabelGraph, target: int) -> list[tuple[int, ...]]:
    """Exhaustive simple root-to-target paths, lexicographic by id sequence.

    Plain DFS without memoisation: the enumeration wants the paths themselves
    and label graphs stay small. Works for any non-root target node; the
    public :func:`enumerate_paths` restricts it to label nodes.
    """
    root = graph.root
    out: list[tuple[int, ...]] = []
    if target == root:
        return [(root,)]
    path = [root]
    on_path = {root}

    def dfs(node: int) -> None:
        for child in graph.children(node):  # children are sorted by id
            if child in on_path:
                continue
            if child == target:
                out.append(tuple(path) + (child,))
                continue
            path.append(child)
            on_path.add(child)
            dfs(child)
            path.pop()
            on_path.remove(child)

    dfs(root)
    out.sort()
    return out


def enumerate_paths(graph: LabelGraph, label: int) -> list[tuple[int, ...]]:
    """All simple root-to-label prediction paths for a label node."""
    _require_label(graph, label)
    return all_paths_to(graph, label)


def are_competing(graph: LabelGraph, u: int, w: int) -> bool:
    """True iff u and w belong to the same (explicit or implicit) group."""
    if u == w:
        raise ValueError("are_competing requires two distinct nodes")
    gu = graph.group_of(u)
    return gu is not None and w in gu.members


def _split_paths(graph: LabelGraph, target: int) -> PathSet:
    paths = all_paths_to(graph, target)
    # Per path, which members of each group it touches.
    touched: list[dict[str, set[int]]] = []
    for p in paths:
        groups: dict[str, set[int]] = {}
        for node in p:
            g = graph.group_of(node)
            if g is not None:
                groups.setdefault(g.name, set()).add(node)
        touched.append(groups)

    nondet = [False] * len(paths)
    for i in range(len(paths)):
        for j in range(len(paths)):
            if i == j:
                continue
            gi, gj = touched[i], touched[j]
            for gname, mi in gi.items():
                mj = gj.get(gname)
                # u in path i, w in path j, u != w, same group
                if mj and len(mi | mj) >= 2:
                    nondet[i] = True
                    break
            if nondet[i]:
                break
    det = tuple(p for p, nd in zip(paths, nondet) if not nd)
    ndet = tuple(p for p, nd in zip(paths, nondet) if nd)
    return PathSet(label=target, deterministic=det, nondeterministic=ndet)


def classify_paths(graph: LabelGraph, label: int) -> PathSet:
    """Partition a label's groundtruth paths into deterministic/nondeterministic.

    A path P is nondeterministic iff another path P' for the same label
    contains a node w competing with some u on P with w != u; deterministic
    otherwise. Classification only depends on the set of paths, never on
    their enumeration order.
    """
    _require_label(graph, label)
    return _split_paths(graph, label)


def _certain_members(graph: LabelGraph, target: int) -> frozenset[int]:
    paths = all_paths_to(graph, target)
    if not paths:
        return frozenset({target})
    common = set(paths[0])
    for p in paths[1:]:
        common &= set(p)
    return frozenset(common | {target})


def certain_nodes(graph: LabelGraph, label: int) -> CertainNodeSet:
    """Reward set for a label: intersection of all its paths, plus the label.

    Nodes on every groundtruth path are exactly those the annotation
    guarantees; ambiguous group members (on some paths but not all) are
    excluded so sampling them is neither rewarded nor punished.
    """
    _require_label(graph, label)
    return CertainNodeSet(label=label, members=_certain_members(graph, label))
