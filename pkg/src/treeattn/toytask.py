"""Synthetic ablation experiments: tree-determined token labels learned
with syntax masks, with random masks of matched density, or with full
attention.

Labels are pure functions of tree structure (never of token identity), so
syntax masks provably carry signal while random and full topologies must
fall back on positional statistics. Random masks match the one-count of
the syntax mask they replace, isolating topology from sparsity level, and
parameter counts are identical across all three modes.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from . import attention as att
from .errors import NumericError, StructureError
from .masks import Mask, MaskConfig, MaskSet, MaskSpec, SIBLING, build_mask_set
from .rng import spawn
from .treebank import DEPENDENCY, Node, SyntaxTree, Token

TASKS = ("root_distance_parity", "within_k_of_root")
MASK_MODES = ("syntax", "random", "full")


# ---------------------------------------------------------------------------
# Random trees


def decode_tree_sequence(n: int, sequence, root: int) -> dict[int, int | None]:
    """Decode one point of the generator's sequence space into parent links.

    `sequence` is a Pruefer sequence over 1..n (length n-2) and `root` the
    chosen root; together they range over exactly the n^(n-1) rooted
    labeled trees, one point per tree. Returns parent-by-token (root maps
    to None).
    """
    if n == 1:
        return {1: None}
    if n == 2:
        edges = [(1, 2)]
    else:
        sequence = list(sequence)
        if len(sequence) != n - 2:
            raise StructureError(f"sequence length {len(sequence)} != n-2 = {n - 2}")
        degree = [1] * (n + 1)
        for s in sequence:
            degree[s] += 1
        leaves = [i for i in range(1, n + 1) if degree[i] == 1]
        heapq.heapify(leaves)
        edges = []
        for s in sequence:
            leaf = heapq.heappop(leaves)
            edges.append((leaf, s))
            degree[s] -= 1
            if degree[s] == 1:
                heapq.heappush(leaves, s)
        edges.append((heapq.heappop(leaves), heapq.heappop(leaves)))

    adj: dict[int, list[int]] = {i: [] for i in range(1, n + 1)}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    parent: dict[int, int | None] = {root: None}
    frontier = [root]
    while frontier:
        nxt = []
        for u in frontier:
            for v in sorted(adj[u]):
                if v not in parent:
                    parent[v] = u
                    nxt.append(v)
        frontier = nxt
    return parent


def _tree_from_parents(n: int, parent: dict[int, int | None]) -> SyntaxTree:
    tokens = tuple(Token(index=i, form=f"t{i}") for i in range(1, n + 1))
    nodes = tuple(
        Node(id=i, label=f"t{i}", parent=parent[i], token_index=i) for i in range(1, n + 1)
    )
    root = next(i for i in range(1, n + 1) if parent[i] is None)
    return SyntaxTree(kind=DEPENDENCY, nodes=nodes, root_id=root, tokens=tokens)


def gen_random_tree(n: int, seed: int) -> SyntaxTree:
    """Uniform random rooted labeled dependency tree on n tokens, decoded
    deterministically from the seed (Pruefer sequence plus root draw)."""
    if n < 1:
        raise StructureError(f"token count must be >= 1, got {n}")
    rng = spawn(seed, "tree")
    sequence = [int(x) for x in rng.integers(1, n + 1, size=max(0, n - 2))]
    root = int(rng.integers(1, n + 1)) if n >= 2 else 1
    return _tree_from_parents(n, decode_tree_sequence(n, sequence, root))


# ---------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True)
class ToyDataset:
    task: str
    k: int
    seed: int
    train: tuple[tuple[SyntaxTree, tuple[int, ...]], ...]
    dev: tuple[tuple[SyntaxTree, tuple[int, ...]], ...]
    test: tuple[tuple[SyntaxTree, tuple[int, ...]], ...]

    @property
    def n_classes(self) -> int:
        return 2

    @property
    def max_tokens(self) -> int:
        return max(
            tree.n_tokens for split in (self.train, self.dev, self.test) for tree, _ in split
        )


def token_depths(tree: SyntaxTree) -> list[int]:
    """Tree distance from each token to the root, in token order."""
    parents = {node.id: node.parent for node in tree.nodes}
    token_nodes = tree.token_node_ids()
    token_of = {nid: ti for ti, nid in token_nodes.items()}
    depths: dict[int, int] = {}

    def depth(nid: int) -> int:
        if nid not in depths:
            p = parents[nid]
            depths[nid] = 0 if p is None else depth(p) + 1
        return depths[nid]

    return [depth(token_nodes[t]) for t in range(1, tree.n_tokens + 1)]


def labels_for(tree: SyntaxTree, task: str, k: int = 1) -> tuple[int, ...]:
    depths = token_depths(tree)
    if task == "root_distance_parity":
        return tuple(d % 2 for d in depths)
    if task == "within_k_of_root":
        return tuple(1 if d <= k else 0 for d in depths)
    raise StructureError(f"unknown task {task!r}; expected one of {TASKS}")


def make_dataset(
    task: str,
    sizes: tuple[int, int, int],
    seed: int,
    n_range: tuple[int, int] = (5, 10),
    k: int = 1,
) -> ToyDataset:
    """Seed-deterministic corpus of random trees with task labels."""
    if task not in TASKS:
        raise StructureError(f"unknown task {task!r}; expected one of {TASKS}")
    lo, hi = n_range
    splits = []
    for split_name, count in zip(("train", "dev", "test"), sizes):
        rng = spawn(seed, "toy-data", split_name)
        items = []
        for _ in range(count):
            n = int(rng.integers(lo, hi + 1))
            tree = gen_random_tree(n, int(rng.integers(2**63)))
            items.append((tree, labels_for(tree, task, k)))
        splits.append(tuple(items))
    return ToyDataset(task=task, k=k, seed=seed, train=splits[0], dev=splits[1], test=splits[2])


# ---------------------------------------------------------------------------
# Mask modes


def full_mask_set(n: int) -> MaskSet:
    dense = np.ones((n, n), dtype=bool)
    spec = MaskSpec(category=SIBLING, distance=1, tree_kind=DEPENDENCY)
    config = MaskConfig(max_dist=1)
    return MaskSet(
        masks=(Mask.from_dense(spec, dense),), n=n, tree_kinds=(DEPENDENCY,), config=config
    )


def matched_random_mask_set(syntax_set: MaskSet, seed: int, sentence_index: int) -> MaskSet:
    """Replace every mask with a random one of identical one-count.

    The diagonal stays on (additive attention needs a nonempty row) and the
    remaining ones are placed uniformly over off-diagonal cells, drawn
    per sentence per seed.
    """
    rng = spawn(seed, "random-mask", sentence_index)
    n = syntax_set.n
    off_cells = n * n - n
    replaced = []
    for mask in syntax_set.masks:
        extra = mask.ones_count - n
        if extra < 0:
            raise StructureError("syntax mask lacks self-loops; cannot match counts")
        dense = np.eye(n, dtype=bool)
        if extra:
            flat = rng.choice(off_cells, size=extra, replace=False)
            rows = flat // (n - 1)
            offs = flat % (n - 1)
            cols = np.where(offs >= rows, offs + 1, offs)  # skip the diagonal cell
            dense[rows, cols] = True
        replaced.append(Mask.from_dense(mask.spec, dense))
    return MaskSet(
        masks=tuple(replaced),
        n=n,
        tree_kinds=syntax_set.tree_kinds,
        config=syntax_set.config,
        pruned=syntax_set.pruned,
    )


# ---------------------------------------------------------------------------
# Model


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for one ablation run.

    The optimizer is plain gradient descent with a fixed step size, applied
    per sentence in corpus order; with fixed seeds the whole run is
    bitwise deterministic.
    """

    mask_mode: str = "syntax"
    layers: int = 1
    d_model: int = 32
    heads: int = 4
    d_head: int = 8
    d_ff: int = 64
    max_dist: int = 6
    step_size: float = 0.5
    epochs: int = 5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    attention_mode: str = att.ADDITIVE

    def __post_init__(self):
        if self.mask_mode not in MASK_MODES:
            raise StructureError(f"unknown mask_mode {self.mask_mode!r}")
        if self.heads * self.d_head != self.d_model:
            raise StructureError("d_model must equal heads * d_head")


@dataclass
class _Model:
    embedding: np.ndarray  # (max_tokens, d_model), indexed by token position
    blocks: list[att.BlockParams]
    cls_w: np.ndarray  # (d_model, n_classes)
    cls_b: np.ndarray


def _init_model(config: ExperimentConfig, max_tokens: int, n_classes: int, seed: int) -> _Model:
    emb_rng = spawn(seed, "toy-embedding")
    bound = 1.0 / math.sqrt(config.d_model)
    embedding = emb_rng.uniform(-bound, bound, size=(max_tokens, config.d_model))
    blocks = [
        att.init_block_params(
            config.d_model, config.heads, config.d_head, config.d_ff, spawn(seed, "toy-block", l)
        )
        for l in range(config.layers)
    ]
    cls_rng = spawn(seed, "toy-classifier")
    cls_w = cls_rng.uniform(-bound, bound, size=(config.d_model, n_classes))
    cls_b = cls_rng.uniform(-bound, bound, size=(n_classes,))
    return _Model(embedding=embedding, blocks=blocks, cls_w=cls_w, cls_b=cls_b)


def model_parameter_count(config: ExperimentConfig, max_tokens: int, n_classes: int = 2) -> int:
    """Trainable parameter count; depends on dims only, never on mask_mode."""
    model = _init_model(config, max_tokens, n_classes, seed=0)
    total = model.embedding.size + model.cls_w.size + model.cls_b.size
    total += sum(att.n_parameters(b) for b in model.blocks)
    return total


def _forward(model: _Model, mask_set: MaskSet, n: int, mode: str):
    h = model.embedding[:n]
    caches = []
    for params in model.blocks:
        h, cache = att.block_forward(h, mask_set, params, mode)
        caches.append(cache)
    logits = h @ model.cls_w + model.cls_b
    probs = att.softmax_rows(logits)
    return h, probs, caches


def _train_step(model: _Model, mask_set: MaskSet, labels, config: ExperimentConfig) -> float:
    n = len(labels)
    h_final, probs, caches = _forward(model, mask_set, n, config.attention_mode)
    label_idx = np.asarray(labels, dtype=int)
    picked = probs[np.arange(n), label_idx]
    with np.errstate(divide="ignore"):
        loss = float(-np.log(picked).mean())

    dlogits = probs.copy()
    dlogits[np.arange(n), label_idx] -= 1.0
    dlogits /= n
    dcls_w = h_final.T @ dlogits
    dcls_b = dlogits.sum(axis=0)
    dh = dlogits @ model.cls_w.T
    block_grads = []
    for cache in reversed(caches):
        dh, grads = att.block_backward(cache, dh)
        block_grads.append(grads)
    block_grads.reverse()

    step = config.step_size
    model.embedding[:n] -= step * dh
    model.cls_w -= step * dcls_w
    model.cls_b -= step * dcls_b
    for li, grads in enumerate(block_grads):
        params = model.blocks[li]
        updated = {
            name: arr - step * g
            for (name, arr), (_, g) in zip(att.param_arrays(params), att.param_arrays(grads))
        }
        model.blocks[li] = att.params_from_dict(updated)
    return loss


def _accuracy(model: _Model, items, mask_sets, mode: str) -> float:
    correct = 0
    total = 0
    for (tree, labels), mask_set in zip(items, mask_sets):
        _, probs, _ = _forward(model, mask_set, tree.n_tokens, mode)
        correct += int((probs.argmax(axis=1) == np.asarray(labels)).sum())
        total += len(labels)
    return correct / total


@dataclass(frozen=True)
class ToyMetrics:
    mask_mode: str
    accuracies: dict[int, float]  # per seed: test accuracy
    mean: float
    std: float


def _mask_sets_for(items, config: ExperimentConfig, seed: int, split_offset: int):
    syntax_cfg = MaskConfig(max_dist=config.max_dist)
    sets = []
    for idx, (tree, _) in enumerate(items):
        if config.mask_mode == "full":
            sets.append(full_mask_set(tree.n_tokens))
            continue
        syntax_set = build_mask_set(tree, syntax_cfg)
        if config.mask_mode == "syntax":
            sets.append(syntax_set)
        else:
            sets.append(matched_random_mask_set(syntax_set, seed, split_offset + idx))
    return sets


def train_toy(config: ExperimentConfig, dataset: ToyDataset) -> ToyMetrics:
    """Train one model per seed and report test accuracy per seed.

    Divergence (non-finite loss) aborts with the offending seed and epoch.
    """
    for split in (dataset.train, dataset.dev, dataset.test):
        if not split:
            raise StructureError("dataset splits must be nonempty")
    max_tokens = dataset.max_tokens
    accuracies: dict[int, float] = {}
    for seed in config.seeds:
        train_sets = _mask_sets_for(dataset.train, config, seed, 0)
        test_sets = _mask_sets_for(dataset.test, config, seed, len(dataset.train))
        model = _init_model(config, max_tokens, dataset.n_classes, seed)
        for epoch in range(config.epochs):
            for (tree, labels), mask_set in zip(dataset.train, train_sets):
                try:
                    loss = _train_step(model, mask_set, labels, config)
                except NumericError as exc:
                    raise NumericError(
                        f"training diverged at seed {seed}, epoch {epoch + 1}: {exc}"
                    ) from None
                if not math.isfinite(loss):
                    raise NumericError(
                        f"training diverged at seed {seed}, epoch {epoch + 1}"
                    )
        accuracies[seed] = _accuracy(model, dataset.test, test_sets, config.attention_mode)
    values = np.array(list(accuracies.values()))
    return ToyMetrics(
        mask_mode=config.mask_mode,
        accuracies=accuracies,
        mean=float(values.mean()),
        std=float(values.std()),
    )


def metrics_tsv(all_metrics: list[ToyMetrics]) -> str:
    """Metrics TSV: one row per (mode, seed), then summary rows per mode."""
    lines = ["mode\tseed\ttest_accuracy"]
    for metrics in all_metrics:
        for seed in sorted(metrics.accuracies):
            lines.append(f"{metrics.mask_mode}\t{seed}\t{metrics.accuracies[seed]:.6f}")
    for metrics in all_metrics:
        lines.append(f"{metrics.mask_mode}\tmean\t{metrics.mean:.6f}")
        lines.append(f"{metrics.mask_mode}\tstd\t{metrics.std:.6f}")
    return "\n".join(lines) + "\n"
