"""Encoder-decoder path prediction model.

A small tanh MLP encodes the input feature vector; its output initialises the
hidden state of a GRU decoder that walks the label graph one node per step.
At every step the output projection produces logits over the whole vocabulary,
which are masked down to the graph children of the previous token and
normalised with a block softmax over the competing groups present among the
candidates. START and EOP are decoder vocabulary sentinels, never graph nodes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .labelgraph import LabelGraph, NodeKind, load_graph
from .numerics import Tensor


class InvalidPath(ValueError):
    pass


class NoCandidates(RuntimeError):
    """A non-label leaf was reached; valid graphs never produce this."""


@dataclass(frozen=True)
class StepDistribution:
    """Candidate tokens for one decode step with their block-softmax mass.

    ``blocks`` holds index positions into ``tokens``; each block's
    probabilities sum to one and different blocks are independent.
    """

    tokens: tuple[int, ...]
    probs: np.ndarray
    blocks: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class SampledPath:
    """Free-running sample: visited graph nodes plus the chosen-step probs."""

    tokens: tuple[int, ...]
    step_probs: tuple[float, ...]
    ended_with_eop: bool


class LabelPathModel:
    """Parameters plus the per-token candidate tables for one label graph.

    Token ids: graph node ids, then START (= node count) and EOP (= START+1).
    The candidate table is precomputed per token: graph children partitioned
    into their groups restricted to the candidate set, singleton blocks for
    ungrouped children, and an EOP singleton when the token is a label node.
    """

    def __init__(self, graph: LabelGraph, input_dim: int, embed_dim: int,
                 hidden: int, seed: int = 0, graph_file: str = ""):
        self.graph = graph
        self.input_dim = int(input_dim)
        self.embed_dim = int(embed_dim)
        self.hidden = int(hidden)
        self.graph_file = graph_file
        n = len(graph.nodes)
        self.start_token = n
        self.eop_token = n + 1
        self.vocab_size = n + 2

        rng = np.random.default_rng(seed)
        p: dict[str, Tensor] = {}

        def w(name, rows, cols):
            p[name] = nm.parameter(rng.normal(0.0, 1.0 / np.sqrt(rows), size=(rows, cols)))

        def b(name, size):
            p[name] = nm.parameter(np.zeros(size))

        w("enc.w1", self.input_dim, hidden)
        b("enc.b1", hidden)
        w("enc.w2", hidden, hidden)
        b("enc.b2", hidden)
        p["emb"] = nm.parameter(rng.normal(0.0, 0.1, size=(self.vocab_size, embed_dim)))
        self.gru = nm.GruParams.init(embed_dim, hidden, rng, "gru", p)
        w("out.w", hidden, self.vocab_size)
        b("out.b", self.vocab_size)
        self.params = p

        self._step_table: dict[int, tuple[tuple[int, ...], tuple[tuple[int, ...], ...]]] = {}
        self._terminal_table: dict[int, tuple[tuple[int, ...], tuple[tuple[int, ...], ...]]] = {}

    @property
    def encoder_param_names(self) -> tuple[str, ...]:
        return ("enc.w1", "enc.b1", "enc.w2", "enc.b2")

    # -- candidate sets -------------------------------------------------------

    def candidates(self, prev_token: int, offer_eop: bool = False
                   ) -> tuple[tuple[int, ...], tuple[tuple[int, ...], ...]]:
        """Candidate token ids and their block partition after ``prev_token``.

        ``offer_eop`` additionally exposes the EOP sentinel; the trainer uses
        it when a target path legitimately terminates at ``prev_token`` (a
        coarse fusion target) even though the node is not label-kind.
        """
        table = self._terminal_table if offer_eop else self._step_table
        hit = table.get(prev_token)
        if hit is not None:
            return hit
        if prev_token == self.start_token:
            entry = ((self.graph.root,), ((0,),))
        elif prev_token == self.eop_token or not 0 <= prev_token < len(self.graph.nodes):
            raise InvalidPath(f"token {prev_token} cannot start a decode step")
        else:
            node = self.graph.node(prev_token)
            toks = list(self.graph.children(prev_token))
            want_eop = offer_eop or node.kind is NodeKind.LABEL
            if want_eop:
                toks.append(self.eop_token)
            if not toks:
                raise NoCandidates(f"node {node.name!r} has no children and no EOP")
            toks.sort()
            pos = {t: i for i, t in enumerate(toks)}
            blocks: list[tuple[int, ...]] = []
            assigned: set[int] = set()
            for t in toks:
                if t in assigned:
                    continue
                if t == self.eop_token:
                    blocks.append((pos[t],))
                    assigned.add(t)
                    continue
                g = self.graph.group_of(t)
                if g is None:
                    blocks.append((pos[t],))
                    assigned.add(t)
                else:
                    members = sorted(m for m in g.members if m in pos)
                    blocks.append(tuple(pos[m] for m in members))
                    assigned.update(members)
            entry = (tuple(toks), tuple(blocks))
        table[prev_token] = entry
        return entry

    # -- forward passes -------------------------------------------------------

    def encode(self, x: np.ndarray) -> Tensor:
        """Feature matrix [m, hidden] for inputs [m, input_dim] (or one row)."""
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.input_dim:
            raise nm.ShapeMismatch(f"encode: expected [m,{self.input_dim}], got {arr.shape}")
        p = self.params
        h = nm.tanh(nm.add_rowvec(nm.matmul(nm.constant(arr), p["enc.w1"]), p["enc.b1"]))
        return nm.add_rowvec(nm.matmul(h, p["enc.w2"]), p["enc.b2"])

    def decode_logits(self, f_state: Tensor, tokens_in: list[int]) -> tuple[Tensor, Tensor]:
        """One batched GRU step: new state [m,h] and logits [m, vocab]."""
        e = nm.gather_rows(self.params["emb"], tokens_in)
        f_t = nm.gru_step(self.gru, e, f_state)
        z = nm.add_rowvec(nm.matmul(f_t, self.params["out.w"]), self.params["out.b"])
        return f_t, z

    def step(self, f_prev: Tensor, prev_token: int,
             offer_eop: bool = False) -> tuple[StepDistribution, Tensor]:
        """Single-sample decode step: next-token distribution plus new state."""
        if f_prev.data.ndim == 1:
            f_prev = nm._promote_row(f_prev)
        f_t, z = self.decode_logits(f_prev, [prev_token])
        toks, blocks = self.candidates(prev_token, offer_eop=offer_eop)
        # block softmax over the candidate logits gathered from the vocab row
        cand_logits = nm.constant(z.data[0][list(toks)])
        probs = nm.block_softmax(cand_logits, blocks).data
        dist = StepDistribution(tokens=toks, probs=probs, blocks=blocks)
        return dist, f_t

    def step_log_prob(self, z_row: Tensor, prev_token: int, target_token: int,
                      offer_eop: bool = False) -> Tensor:
        """Differentiable log P(target | prev) from a vocab logits row."""
        toks, blocks = self.candidates(prev_token, offer_eop=offer_eop)
        if target_token not in toks:
            raise InvalidPath(
                f"token {target_token} is not a candidate after {prev_token}")
        pos = toks.index(target_token)
        block = next(b for b in blocks if pos in b)
        return nm.block_log_prob(z_row, [toks[i] for i in block], target_token)

    def path_log_prob(self, x: np.ndarray, path: list[int] | tuple[int, ...],
                      terminal_eop: bool = True) -> Tensor:
        """Teacher-forced log-probability of a graph path starting at root.

        Conditions each step on the groundtruth prefix and, when
        ``terminal_eop`` is set, scores the closing EOP choice as well.
        """
        path = list(path)
        if not path or path[0] != self.graph.root:
            raise InvalidPath("path must start at the root node")
        for a, b in zip(path, path[1:]):
            if b not in self.graph.children(a):
                raise InvalidPath(f"no edge {a}->{b} in the graph")
        tokens_in = [self.start_token] + path
        targets = path + ([self.eop_token] if terminal_eop else [])
        f = self.encode(x)
        terms: list[Tensor] = []
        for t, target in enumerate(targets):
            prev = tokens_in[t]
            is_terminal = terminal_eop and t == len(targets) - 1
            f, z = self.decode_logits(f, [prev])
            zrow = nm.take_row(z, 0)
            terms.append(self.step_log_prob(zrow, prev, target, offer_eop=is_terminal))
        return nm.add_n(terms)

    def sample_path(self, x: np.ndarray, rng: np.random.Generator,
                    max_len: int) -> SampledPath:
        """Ancestral sample from the decoder, free-running from START.

        Within each candidate block one member is drawn from the block's
        distribution; across blocks the drawn member with the highest
        probability wins (ties to the lowest token id). Stops at EOP, after
        ``max_len`` emitted tokens, or when sampling walks into a dead-end
        augmented node (possible on subgraphs; the trajectory just truncates).
        """
        if max_len < 2:
            raise ValueError("max_len must be at least 2")
        f = self.encode(x)
        prev = self.start_token
        tokens: list[int] = []
        probs: list[float] = []
        ended = False
        for _ in range(max_len):
            try:
                dist, f = self.step(f, prev)
            except NoCandidates:
                break
            tok, p = _sample_cross_block(dist, rng)
            probs.append(p)
            if tok == self.eop_token:
                ended = True
                break
            tokens.append(tok)
            prev = tok
        return SampledPath(tokens=tuple(tokens), step_probs=tuple(probs),
                           ended_with_eop=ended)

    def sampled_path_log_prob(self, x: np.ndarray, sampled: SampledPath) -> Tensor:
        """Differentiable re-scoring of a sampled trajectory (same choices)."""
        tokens_in = [self.start_token] + list(sampled.tokens)
        targets = list(sampled.tokens) + ([self.eop_token] if sampled.ended_with_eop else [])
        if not targets:
            raise InvalidPath("empty sampled path")
        f = self.encode(x)
        terms: list[Tensor] = []
        for t, target in enumerate(targets):
            f, z = self.decode_logits(f, [tokens_in[t]])
            zrow = nm.take_row(z, 0)
            terms.append(self.step_log_prob(zrow, tokens_in[t], target))
        return nm.add_n(terms)


def _sample_cross_block(dist: StepDistribution, rng: np.random.Generator) -> tuple[int, float]:
    best_tok, best_p = None, -1.0
    for blk in dist.blocks:
        p = dist.probs[list(blk)]
        pick = blk[int(rng.choice(len(blk), p=p / p.sum()))]
        tok, prob = dist.tokens[pick], float(dist.probs[pick])
        if prob > best_p or (prob == best_p and tok < best_tok):
            best_tok, best_p = tok, prob
    return best_tok, best_p


def greedy_choice(dist: StepDistribution) -> tuple[int, float]:
    """Global argmax across every candidate block; ties to lowest token id."""
    i = int(np.argmax(dist.probs))  # tokens ascend, argmax takes the first max
    return dist.tokens[i], float(dist.probs[i])


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_model(path: str, model: LabelPathModel) -> None:
    """Write the PCK1 parameter file plus the ``<path>.json`` sidecar."""
    nm.save_params(path, {k: v.data for k, v in model.params.items()})
    sidecar = {"graph_file": model.graph_file, "input_dim": model.input_dim,
               "embed_dim": model.embed_dim, "hidden": model.hidden}
    with open(path + ".json", "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2)
        f.write("\n")


def read_sidecar(path: str) -> dict:
    with open(path + ".json", "r", encoding="utf-8") as f:
        return json.load(f)


def load_model(path: str, graph: LabelGraph | None = None) -> LabelPathModel:
    side = read_sidecar(path)
    if graph is None:
        gpath = side["graph_file"]
        if not os.path.exists(gpath):
            local = os.path.join(os.path.dirname(os.path.abspath(path)),
                                 os.path.basename(gpath))
            if os.path.exists(local):
                gpath = local
        graph = load_graph(gpath)
    model = LabelPathModel(graph, side["input_dim"], side["embed_dim"],
                           side["hidden"], graph_file=side["graph_file"])
    weights = nm.load_params(path)
    for name, tensor in model.params.items():
        if name not in weights:
            raise ValueError(f"checkpoint missing parameter {name!r}")
        if weights[name].shape != tensor.data.shape:
            raise ValueError(f"checkpoint shape mismatch for {name!r}")
        tensor.data = weights[name]
    return model
