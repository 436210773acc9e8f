"""Path enumeration and classification against brute-force oracles."""

import itertools

import numpy as np
import pytest

from pathcast.labelgraph import build_graph
from pathcast.pathalg import (NotALabelNode, are_competing, certain_nodes,
                              classify_paths, enumerate_paths)

from test_labelgraph import figure2_subgraph, random_dag


def oracle_all_paths(graph, target):
    """Exhaustive DFS over adjacency only; independent of the library walk."""
    out = []

    def walk(node, path):
        if node == target:
            out.append(tuple(path))
            return
        for child in graph.children(node):
            if child not in path:
                walk(child, path + [child])

    walk(graph.root, [graph.root])
    return sorted(out)


def oracle_classify(graph, target):
    """Definition-literal pairwise check over all path pairs."""
    paths = oracle_all_paths(graph, target)
    nondet = set()
    for i, p in enumerate(paths):
        for j, q in enumerate(paths):
            if i == j:
                continue
            for u in p:
                for w in q:
                    if u != w:
                        gu = graph.group_of(u)
                        if gu is not None and w in gu.members:
                            nondet.add(i)
    det = [p for i, p in enumerate(paths) if i not in nondet]
    nd = [p for i, p in enumerate(paths) if i in nondet]
    return det, nd


class TestEnumeratePaths:
    def test_chain(self):
        g = build_graph([("d", ["x"])], augmented_spec=[("a", ["root"])],
                        edge_spec=[("a", "x")])
        paths = enumerate_paths(g, g.id_of("x"))
        assert paths == [(0, g.id_of("a"), g.id_of("x"))]

    def test_figure2_british_shorthair_has_four_paths(self):
        g = figure2_subgraph()
        paths = enumerate_paths(g, g.id_of("british-shorthair"))
        assert len(paths) == 4
        names = {tuple(g.node(i).name for i in p) for p in paths}
        assert ("animal", "cat", "shorthair", "british-shorthair") in names

    def test_not_a_label_node(self):
        g = figure2_subgraph()
        with pytest.raises(NotALabelNode):
            enumerate_paths(g, g.id_of("cat"))
        with pytest.raises(NotALabelNode):
            enumerate_paths(g, 10**6)

    def test_matches_brute_force_on_random_dags(self):
        rng = np.random.default_rng(10)
        for _ in range(60):
            g = random_dag(rng)
            for label in g.label_ids():
                assert enumerate_paths(g, label) == oracle_all_paths(g, label)

    def test_lexicographic_order(self):
        g = figure2_subgraph()
        paths = enumerate_paths(g, g.id_of("british-shorthair"))
        assert paths == sorted(paths)


class TestAreCompeting:
    def test_same_group(self):
        g = figure2_subgraph()
        assert are_competing(g, g.id_of("shorthair"), g.id_of("longhair"))

    def test_different_groups(self):
        g = figure2_subgraph()
        assert not are_competing(g, g.id_of("shorthair"), g.id_of("tabby-color"))

    def test_self_comparison_rejected(self):
        g = figure2_subgraph()
        with pytest.raises(ValueError):
            are_competing(g, g.id_of("shorthair"), g.id_of("shorthair"))

    def test_ungrouped_node_competes_with_nothing(self):
        g = figure2_subgraph()
        assert not are_competing(g, g.id_of("cat"), g.id_of("shorthair"))


class TestClassifyPaths:
    def test_figure2_split(self):
        g = figure2_subgraph()
        ps = classify_paths(g, g.id_of("british-shorthair"))
        assert len(ps.deterministic) == 1
        assert len(ps.nondeterministic) == 3
        det = ps.deterministic[0]
        assert tuple(g.node(i).name for i in det) == \
            ("animal", "cat", "shorthair", "british-shorthair")

    def test_chain_is_deterministic(self):
        g = build_graph([("d", ["x"])], augmented_spec=[("a", ["root"])],
                        edge_spec=[("a", "x")])
        ps = classify_paths(g, g.id_of("x"))
        assert len(ps.deterministic) == 1
        assert len(ps.nondeterministic) == 0

    def test_partition_is_exhaustive(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            g = random_dag(rng)
            for label in g.label_ids():
                ps = classify_paths(g, label)
                assert len(ps.deterministic) + len(ps.nondeterministic) == \
                    len(enumerate_paths(g, label))
                assert not (set(ps.deterministic) & set(ps.nondeterministic))

    def test_matches_definition_literal_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(60):
            g = random_dag(rng)
            for label in g.label_ids():
                ps = classify_paths(g, label)
                det, nd = oracle_classify(g, label)
                assert sorted(ps.deterministic) == det
                assert sorted(ps.nondeterministic) == nd

    def test_order_independence(self):
        g = figure2_subgraph()
        label = g.id_of("british-shorthair")
        ps = classify_paths(g, label)
        det, nd = oracle_classify(g, label)
        for perm in itertools.permutations(range(4)):
            # the per-path verdict never depends on enumeration order
            assert set(ps.deterministic) == set(det)
            assert set(ps.nondeterministic) == set(nd)

    def test_not_a_label_node(self):
        g = figure2_subgraph()
        with pytest.raises(NotALabelNode):
            classify_paths(g, g.id_of("shorthair"))


class TestCertainNodes:
    def test_chain(self):
        g = build_graph([("d", ["x"])], augmented_spec=[("a", ["root"])],
                        edge_spec=[("a", "x")])
        s = certain_nodes(g, g.id_of("x"))
        assert s.members == frozenset({0, g.id_of("a"), g.id_of("x")})

    def test_figure2_excludes_ambiguous_members(self):
        g = figure2_subgraph()
        s = certain_nodes(g, g.id_of("british-shorthair"))
        names = {g.node(i).name for i in s.members}
        assert names == {"animal", "cat", "british-shorthair"}

    def test_disjoint_routes_leave_root_and_label(self):
        g = build_graph([("d", ["x"])],
                        augmented_spec=[("a", ["root"]), ("b", ["root"])],
                        edge_spec=[("a", "x"), ("b", "x")])
        s = certain_nodes(g, g.id_of("x"))
        assert s.members == frozenset({0, g.id_of("x")})

    def test_matches_intersection_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(40):
            g = random_dag(rng)
            for label in g.label_ids():
                paths = oracle_all_paths(g, label)
                want = set(paths[0])
                for p in paths[1:]:
                    want &= set(p)
                want |= {label}
                assert certain_nodes(g, label).members == frozenset(want)

    def test_members_on_every_path(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            g = random_dag(rng)
            for label in g.label_ids():
                members = certain_nodes(g, label).members
                for p in enumerate_paths(g, label):
                    assert members <= set(p) | {label}
