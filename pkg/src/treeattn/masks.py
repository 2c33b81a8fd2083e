"""Tree-derived attention masks.

A mask is a boolean token-by-token matrix: entry (i, j) set means query
token i may attend to key token j. Four families are generated from a
syntax tree:

  parent(d)   i is a proper ancestor of j, exactly d edges apart
  child(d)    j is a proper ancestor of i, exactly d edges apart
  sibling(d)  i and j are distinct same-sentence tokens at tree distance d
  pairwise    i and j belong to different sentences of a pair

Distances count edges along the tree; for constituency trees the path runs
through internal nodes, so token-level parent/child masks are empty there
(tokens are leaves and never ancestors of one another).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import StructureError
from .treebank import CONSTITUENCY, DEPENDENCY, SentencePair, SyntaxTree, check_valid

PARENT = "parent"
CHILD = "child"
SIBLING = "sibling"
PAIRWISE = "pairwise"
CATEGORIES = (PARENT, CHILD, SIBLING, PAIRWISE)


@dataclass(frozen=True)
class MaskSpec:
    category: str
    distance: int | None
    tree_kind: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise StructureError(f"unknown mask category {self.category!r}")
        if self.category == PAIRWISE:
            if self.distance is not None:
                raise StructureError("pairwise masks carry no distance")
        else:
            if self.distance is None or self.distance < 1:
                raise StructureError(f"{self.category} mask needs a distance >= 1")

    def to_obj(self) -> dict:
        return {"category": self.category, "distance": self.distance, "tree_kind": self.tree_kind}


@dataclass(frozen=True)
class MaskConfig:
    max_dist: int = 15
    self_loops: bool = True
    literal_sibling: bool = True
    prune_empty: bool = False


@dataclass(frozen=True, eq=False)
class Mask:
    """Dense and sparse views of one connectivity matrix; always consistent."""

    spec: MaskSpec
    dense: np.ndarray  # (n, n) bool
    rows: tuple[tuple[int, ...], ...]  # per-row sorted allowed columns, 0-based

    @classmethod
    def from_dense(cls, spec: MaskSpec, dense: np.ndarray) -> "Mask":
        dense = np.array(dense, dtype=bool)
        if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
            raise StructureError(f"mask must be square, got shape {dense.shape}")
        dense.flags.writeable = False
        rows = tuple(tuple(int(j) for j in np.flatnonzero(row)) for row in dense)
        return cls(spec=spec, dense=dense, rows=rows)

    @property
    def n(self) -> int:
        return self.dense.shape[0]

    @property
    def ones_count(self) -> int:
        return int(self.dense.sum())


@dataclass(frozen=True)
class MaskSet:
    masks: tuple[Mask, ...]
    n: int
    tree_kinds: tuple[str, ...]
    config: MaskConfig
    pruned: tuple[MaskSpec, ...] = ()

    def __len__(self) -> int:
        return len(self.masks)


@dataclass(frozen=True)
class Alignment:
    """Word-to-subword expansion: one contiguous 1-based span per word."""

    spans: tuple[tuple[int, int], ...]  # (first, last) inclusive

    def __post_init__(self):
        expected_start = 1
        for w, (lo, hi) in enumerate(self.spans, start=1):
            if lo != expected_start or hi < lo:
                raise StructureError(
                    f"alignment span for word {w} is {(lo, hi)}; spans must be nonempty, "
                    "contiguous, and cover 1..n_subword in order"
                )
            expected_start = hi + 1

    @property
    def n_words(self) -> int:
        return len(self.spans)

    @property
    def n_subwords(self) -> int:
        return self.spans[-1][1] if self.spans else 0

    def word_of(self) -> np.ndarray:
        """0-based word index per 0-based subword position."""
        out = np.empty(self.n_subwords, dtype=int)
        for w, (lo, hi) in enumerate(self.spans):
            out[lo - 1 : hi] = w
        return out


# ---------------------------------------------------------------------------
# Distances and ancestry


def _depths_and_parents(tree: SyntaxTree) -> tuple[dict[int, int], dict[int, int | None]]:
    parents = {node.id: node.parent for node in tree.nodes}
    depths: dict[int, int] = {}

    def depth(nid: int) -> int:
        if nid in depths:
            return depths[nid]
        chain = []
        cur = nid
        while cur not in depths and parents[cur] is not None:
            chain.append(cur)
            cur = parents[cur]
        base = depths.get(cur, 0)
        depths.setdefault(cur, 0)
        for node_id in reversed(chain):
            base += 1
            depths[node_id] = base
        return depths[nid]

    for node in tree.nodes:
        depth(node.id)
    return depths, parents


def _root_path(nid: int, parents: dict[int, int | None]) -> list[int]:
    path = [nid]
    cur = nid
    while parents[cur] is not None:
        cur = parents[cur]
        path.append(cur)
    return path


def token_distance_matrix(tree: SyntaxTree) -> np.ndarray:
    """Pairwise tree distance between tokens, in edges.

    dist(i, j) = depth(i) + depth(j) - 2 * depth(LCA(i, j)), where the node
    of a token is the token itself for dependency trees and the bearing leaf
    for constituency trees.
    """
    check_valid(tree)
    depths, parents = _depths_and_parents(tree)
    token_nodes = tree.token_node_ids()
    n = tree.n_tokens
    order = [token_nodes[i] for i in range(1, n + 1)]
    paths = {nid: _root_path(nid, parents) for nid in set(order)}
    ancestor_depth = {nid: {a: depths[a] for a in paths[nid]} for nid in paths}

    dist = np.zeros((n, n), dtype=int)
    for a in range(n):
        na = order[a]
        anc_a = ancestor_depth[na]
        for b in range(a + 1, n):
            nb = order[b]
            lca_depth = 0
            for anc in paths[nb]:
                if anc in anc_a:
                    lca_depth = depths[anc]
                    break
            d = depths[na] + depths[nb] - 2 * lca_depth
            dist[a, b] = d
            dist[b, a] = d
    return dist


def ancestor_distance(tree: SyntaxTree, i: int, j: int) -> int | None:
    """Hops from token j up to token i when token i is a proper ancestor of
    token j; None otherwise (including i == j)."""
    n = tree.n_tokens
    for idx in (i, j):
        if not 1 <= idx <= n:
            raise StructureError(f"token index {idx} out of range 1..{n}")
    if i == j:
        return None
    token_nodes = tree.token_node_ids()
    parents = {node.id: node.parent for node in tree.nodes}
    target = token_nodes[i]
    cur = parents[token_nodes[j]]
    hops = 1
    while cur is not None:
        if cur == target:
            return hops
        cur = parents[cur]
        hops += 1
    return None


def _ancestor_hops_matrix(tree: SyntaxTree) -> np.ndarray:
    """hops[i, j] = d when token i is a proper ancestor of token j at d
    hops, else 0. Token-bearing ancestors only (0-based indices)."""
    n = tree.n_tokens
    token_nodes = tree.token_node_ids()
    node_token = {nid: ti for ti, nid in token_nodes.items()}
    parents = {node.id: node.parent for node in tree.nodes}
    hops = np.zeros((n, n), dtype=int)
    for j in range(1, n + 1):
        cur = parents[token_nodes[j]]
        d = 1
        while cur is not None:
            ti = node_token.get(cur)
            if ti is not None:
                hops[ti - 1, j - 1] = d
            cur = parents[cur]
            d += 1
    return hops


# ---------------------------------------------------------------------------
# Mask construction


class _TreeTables:
    """Distance and ancestor-hop matrices for one validated tree, computed
    once and shared across all specs built from it."""

    def __init__(self, tree: SyntaxTree):
        self.dist = token_distance_matrix(tree)  # validates the tree
        self.hops = _ancestor_hops_matrix(tree)

    def dense_for(self, spec: MaskSpec, config: MaskConfig) -> np.ndarray:
        d = spec.distance
        if spec.category == PARENT:
            return self.hops == d
        if spec.category == CHILD:
            return self.hops.T == d
        if spec.category == SIBLING:
            dense = self.dist == d
            np.fill_diagonal(dense, False)
            if not config.literal_sibling:
                dense &= (self.hops == 0) & (self.hops.T == 0)
            return dense
        raise StructureError(f"category {spec.category} needs a sentence pair")


def _build_dense(source, spec: MaskSpec, config: MaskConfig, tables) -> np.ndarray:
    if spec.category != PAIRWISE and spec.distance > config.max_dist:
        raise StructureError(
            f"distance {spec.distance} exceeds configured max_dist {config.max_dist}"
        )
    if isinstance(source, SentencePair):
        n1, n2 = source.n1, source.n2
        n = n1 + n2
        dense = np.zeros((n, n), dtype=bool)
        if spec.category == PAIRWISE:
            dense[:n1, n1:] = True
            dense[n1:, :n1] = True
        else:
            t1, t2 = source.trees_for(spec.tree_kind)
            dense[:n1, :n1] = tables[id(t1)].dense_for(spec, config)
            dense[n1:, n1:] = tables[id(t2)].dense_for(spec, config)
    else:
        if spec.category == PAIRWISE:
            raise StructureError("pairwise mask requires a SentencePair input")
        if source.kind != spec.tree_kind:
            raise StructureError(
                f"spec is for {spec.tree_kind} trees but input tree is {source.kind}"
            )
        dense = tables[id(source)].dense_for(spec, config)
    if config.self_loops:
        np.fill_diagonal(dense, True)
    return dense


def _tables_for(source, spec: MaskSpec) -> dict[int, _TreeTables]:
    if isinstance(source, SentencePair):
        if spec.category == PAIRWISE:
            return {}
        t1, t2 = source.trees_for(spec.tree_kind)
        return {id(t1): _TreeTables(t1), id(t2): _TreeTables(t2)}
    return {id(source): _TreeTables(source)}


def build_mask(source: SyntaxTree | SentencePair, spec: MaskSpec, config: MaskConfig) -> Mask:
    """Materialize one mask for a single sentence or a sentence pair.

    For pairs, parent/child/sibling masks are block-diagonal (each sentence
    computed independently on its token span); the pairwise mask covers the
    two off-diagonal blocks. Self-loops, when configured, are set last.
    """
    dense = _build_dense(source, spec, config, _tables_for(source, spec))
    return Mask.from_dense(spec, dense)


def _group_kinds(source) -> tuple[str, ...]:
    if isinstance(source, SentencePair):
        return source.kinds
    if isinstance(source, SyntaxTree):
        return (source.kind,)
    kinds = tuple(t.kind for t in source)
    if len(set(kinds)) != len(kinds):
        raise StructureError(f"duplicate tree kinds in group: {kinds}")
    counts = {t.n_tokens for t in source}
    if len(counts) != 1:
        raise StructureError("trees in a group must cover the same tokens")
    return kinds


def build_mask_set(source, config: MaskConfig = MaskConfig()) -> MaskSet:
    """Enumerate the full mask family for a sentence (or pair).

    `source` is a SyntaxTree, a sequence of SyntaxTrees over the same
    sentence (one per kind), or a SentencePair. Ordering is deterministic:
    tree kinds in input order; within a kind parent, child, sibling with
    ascending distance 1..max_dist, then the pairwise mask for pair inputs.
    With both kinds this yields 3*max_dist masks per kind for single
    sentences (90 at max_dist 15) and one more per kind for pairs (92).
    """
    kinds = _group_kinds(source)
    is_pair = isinstance(source, SentencePair)

    if is_pair:
        trees = [t for member in (source.first, source.second) for t in member]
    elif isinstance(source, SyntaxTree):
        trees = [source]
    else:
        trees = list(source)
    tables = {id(t): _TreeTables(t) for t in trees}

    def source_for(kind: str):
        if is_pair or isinstance(source, SyntaxTree):
            return source
        for t in trees:
            if t.kind == kind:
                return t
        raise StructureError(f"group has no {kind} tree")

    masks: list[Mask] = []
    pruned: list[MaskSpec] = []
    for kind in kinds:
        specs = [
            MaskSpec(category=cat, distance=d, tree_kind=kind)
            for cat in (PARENT, CHILD, SIBLING)
            for d in range(1, config.max_dist + 1)
        ]
        if is_pair:
            specs.append(MaskSpec(category=PAIRWISE, distance=None, tree_kind=kind))
        for spec in specs:
            dense = _build_dense(source_for(kind), spec, config, tables)
            if config.prune_empty:
                off_diag = dense.copy()
                np.fill_diagonal(off_diag, False)
                if not off_diag.any():
                    pruned.append(spec)
                    continue
            masks.append(Mask.from_dense(spec, dense))

    n = trees[0].n_tokens if not is_pair else source.n_tokens
    return MaskSet(
        masks=tuple(masks), n=n, tree_kinds=kinds, config=config, pruned=tuple(pruned)
    )


def expand_to_subwords(mask: Mask, alignment: Alignment, self_loops: bool = True) -> Mask:
    """Lift a word-level mask to subword positions: subword pair (p, q) is
    allowed iff the word pair (word(p), word(q)) is."""
    if mask.n != alignment.n_words:
        raise StructureError(
            f"mask covers {mask.n} words but alignment has {alignment.n_words}"
        )
    word_of = alignment.word_of()
    dense = mask.dense[np.ix_(word_of, word_of)]  # fancy indexing copies
    if self_loops:
        np.fill_diagonal(dense, True)
    return Mask.from_dense(mask.spec, dense)


# ---------------------------------------------------------------------------
# Mask JSON


def mask_set_to_obj(mask_set: MaskSet) -> dict:
    cfg = mask_set.config
    return {
        "n": mask_set.n,
        "config": {
            "max_dist": cfg.max_dist,
            "tree_kinds": list(mask_set.tree_kinds),
            "self_loops": cfg.self_loops,
            "literal_sibling": cfg.literal_sibling,
            "prune_empty": cfg.prune_empty,
            "pruned": [spec.to_obj() for spec in mask_set.pruned],
        },
        "masks": [
            {
                "category": m.spec.category,
                "distance": m.spec.distance,
                "tree_kind": m.spec.tree_kind,
                "rows": [[j + 1 for j in row] for row in m.rows],
            }
            for m in mask_set.masks
        ],
    }


def mask_set_to_json(mask_set: MaskSet) -> str:
    return json.dumps(mask_set_to_obj(mask_set), separators=(",", ":"))
