"""Structural probe: a linear map whose squared distances over token
embeddings approximate tree distances.

Training minimizes, per sentence, the mean absolute difference between
||B(h_i - h_j)||^2 and the tree distance over all token pairs (L1 distance
probe). Evaluation reports UUAS (gold edges recovered by the minimum
spanning tree of predicted distances) and the Spearman correlation between
predicted and gold distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, StructureError
from .masks import token_distance_matrix
from .rng import spawn
from .treebank import DEPENDENCY, SyntaxTree


@dataclass(frozen=True)
class ProbeConfig:
    rank: int
    learning_rate: float = 0.02
    epochs: int = 200
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1 or self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise StructureError("probe config values must be positive")


def _sentence_loss_grad(b: np.ndarray, h: np.ndarray, gold: np.ndarray):
    """L1 loss between predicted squared distances and gold, with its
    gradient in B. The subgradient at exact equality is 0 (np.sign)."""
    n = h.shape[0]
    bh = h @ b.T  # (n, rank)
    diff = bh[:, None, :] - bh[None, :, :]
    pred = (diff**2).sum(axis=2)
    resid = pred - gold
    loss = np.abs(resid).sum() / (n * n)
    c = np.sign(resid) / (n * n)  # symmetric, zero diagonal
    # dL/dB = 4 B H^T (diag(rowsum(C)) - C) H, compact form of the pairwise
    # outer-product sum over (h_i - h_j).
    weighted = c.sum(axis=1)[:, None] * h - c @ h
    grad = 4.0 * (bh.T @ weighted)
    return loss, grad


def train_probe(sentences, config: ProbeConfig) -> np.ndarray:
    """Fit the probe matrix B (rank x d_model) by mini-batch gradient
    descent with a fixed step size; deterministic given config.seed.

    `sentences` is a sequence of (embeddings (n, d_model), SyntaxTree)
    pairs with dependency trees.
    """
    if not sentences:
        raise StructureError("train_probe needs at least one sentence")
    prepared = []
    d_model = None
    for h, tree in sentences:
        h = np.asarray(h, dtype=np.float64)
        if h.ndim != 2:
            raise StructureError(f"embeddings must be 2-d, got shape {h.shape}")
        if tree.kind != DEPENDENCY:
            raise StructureError("the structural probe targets dependency trees")
        if h.shape[0] != tree.n_tokens:
            raise StructureError(
                f"{h.shape[0]} embedding rows for {tree.n_tokens} tokens"
            )
        if d_model is None:
            d_model = h.shape[1]
        elif h.shape[1] != d_model:
            raise StructureError("sentences disagree on embedding width")
        prepared.append((h, token_distance_matrix(tree).astype(np.float64)))
    if config.rank > d_model:
        raise StructureError(f"rank {config.rank} exceeds embedding width {d_model}")

    rng = spawn(config.seed, "probe-init")
    bound = 1.0 / math.sqrt(d_model)
    b = rng.uniform(-bound, bound, size=(config.rank, d_model))
    order_rng = spawn(config.seed, "probe-order")

    for _ in range(config.epochs):
        order = order_rng.permutation(len(prepared))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            grad = np.zeros_like(b)
            for idx in batch:
                h, gold = prepared[idx]
                loss, g = _sentence_loss_grad(b, h, gold)
                if not math.isfinite(loss):
                    raise NumericError("probe loss became non-finite")
                grad += g
            b = b - config.learning_rate * (grad / len(batch))
    if not np.isfinite(b).all():
        raise NumericError("probe parameters became non-finite")
    return b


def probe_loss(b: np.ndarray, sentences) -> float:
    """Mean per-sentence L1 probe loss, as optimized by train_probe."""
    total = 0.0
    for h, tree in sentences:
        h = np.asarray(h, dtype=np.float64)
        gold = token_distance_matrix(tree).astype(np.float64)
        loss, _ = _sentence_loss_grad(b, h, gold)
        total += loss
    return total / len(sentences)


def probe_distances(b: np.ndarray, embeddings) -> np.ndarray:
    """Predicted squared distances ||B(h_i - h_j)||^2; symmetric with an
    exactly zero diagonal."""
    h = np.asarray(embeddings, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if h.ndim != 2 or b.ndim != 2 or b.shape[1] != h.shape[1]:
        raise StructureError(
            f"embeddings {h.shape} and probe {b.shape} are not conformable"
        )
    bh = h @ b.T
    diff = bh[:, None, :] - bh[None, :, :]
    return (diff**2).sum(axis=2)


def gold_edges(tree: SyntaxTree) -> set[tuple[int, int]]:
    """Undirected (parent, child) token pairs of a dependency tree,
    normalized to (min, max) 1-based index order."""
    token_of = {nid: ti for ti, nid in tree.token_node_ids().items()}
    edges = set()
    for node in tree.nodes:
        if node.parent is not None:
            a, b = token_of[node.id], token_of[node.parent]
            edges.add((min(a, b), max(a, b)))
    return edges


def minimum_spanning_tree(distances: np.ndarray) -> set[tuple[int, int]]:
    """Kruskal over the complete graph; ties broken by preferring the
    lexicographically smaller (i, j) pair (1-based)."""
    n = distances.shape[0]
    edges = sorted(
        (float(distances[i, j]), i + 1, j + 1) for i in range(n) for j in range(i + 1, n)
    )
    parent = list(range(n + 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    chosen: set[tuple[int, int]] = set()
    for _, i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            chosen.add((i, j))
            if len(chosen) == n - 1:
                break
    return chosen


def uuas(predicted: np.ndarray, gold: SyntaxTree) -> float:
    """Fraction of gold undirected edges recovered by the MST of the
    predicted distances."""
    predicted = np.asarray(predicted, dtype=np.float64)
    n = gold.n_tokens
    if n < 2:
        raise StructureError("UUAS needs at least 2 tokens")
    if predicted.shape != (n, n):
        raise StructureError(
            f"predicted distances {predicted.shape} do not cover {n} tokens"
        )
    mst = minimum_spanning_tree(predicted)
    return len(mst & gold_edges(gold)) / (n - 1)


def _rank_average_ties(values: np.ndarray) -> np.ndarray:
    """1-based ranks with average ranks assigned to exactly tied values."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(predicted: np.ndarray, gold: np.ndarray) -> float | None:
    """Spearman correlation between the upper-triangle (i < j) entries of
    two distance matrices; None when either rank vector has no variance."""
    predicted = np.asarray(predicted, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    if predicted.shape != gold.shape or predicted.ndim != 2:
        raise StructureError(
            f"distance matrices {predicted.shape} and {gold.shape} must match"
        )
    n = predicted.shape[0]
    if n < 3:
        raise StructureError("Spearman needs n >= 3 tokens")
    iu = np.triu_indices(n, k=1)
    rp = _rank_average_ties(predicted[iu])
    rg = _rank_average_ties(gold[iu])
    sp = rp.std()
    sg = rg.std()
    if sp == 0.0 or sg == 0.0:
        return None
    cov = ((rp - rp.mean()) * (rg - rg.mean())).mean()
    return float(cov / (sp * sg))


def path_indicator_embeddings(tree: SyntaxTree, dim: int | None = None) -> np.ndarray:
    """0/1 embeddings marking the edges on the root-to-token path, so that
    squared Euclidean distances equal tree distances exactly.

    Edge slots are indexed by the child token of the edge; `dim` pads the
    width for corpora with mixed sentence lengths (default: n tokens).
    """
    n = tree.n_tokens
    if dim is None:
        dim = n
    if dim < n:
        raise StructureError(f"dim {dim} cannot hold {n} edge slots")
    token_of = {nid: ti for ti, nid in tree.token_node_ids().items()}
    parents = {node.id: node.parent for node in tree.nodes}
    token_nodes = tree.token_node_ids()
    h = np.zeros((n, dim))
    for t in range(1, n + 1):
        cur = token_nodes[t]
        while parents[cur] is not None:
            h[t - 1, token_of[cur] - 1] = 1.0
            cur = parents[cur]
    return h


@dataclass(frozen=True)
class ProbeReportRow:
    sentence_id: str
    n: int
    uuas: float
    spearman: float | None


def evaluate_probe(b: np.ndarray, sentences) -> list[ProbeReportRow]:
    """Per-sentence UUAS and Spearman for (id, embeddings, tree) triples."""
    rows = []
    for sid, h, tree in sentences:
        pred = probe_distances(b, h)
        gold = token_distance_matrix(tree).astype(np.float64)
        rows.append(
            ProbeReportRow(
                sentence_id=str(sid),
                n=tree.n_tokens,
                uuas=uuas(pred, tree),
                spearman=spearman(pred, gold) if tree.n_tokens >= 3 else None,
            )
        )
    return rows


def report_tsv(rows: list[ProbeReportRow]) -> str:
    """Probe report: one row per sentence plus a summary line of means.
    Undefined Spearman values print as NA and are excluded from the mean."""
    lines = ["sentence_id\tn\tuuas\tspearman"]
    for row in rows:
        sp = "NA" if row.spearman is None else f"{row.spearman:.6f}"
        lines.append(f"{row.sentence_id}\t{row.n}\t{row.uuas:.6f}\t{sp}")
    mean_uuas = sum(r.uuas for r in rows) / len(rows) if rows else float("nan")
    defined = [r.spearman for r in rows if r.spearman is not None]
    mean_sp = f"{sum(defined) / len(defined):.6f}" if defined else "NA"
    lines.append(f"mean\t{sum(r.n for r in rows)}\t{mean_uuas:.6f}\t{mean_sp}")
    return "\n".join(lines) + "\n"
