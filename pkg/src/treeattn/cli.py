"""Command-line front end.

Subcommands: parse, masks, attend, probe, toytrain, bench. A JSON config
file supplies experiment settings; command-line flags override config
values. Every subcommand validates its inputs before any output is
produced, and repeated runs with the same config and seeds emit
byte-identical files.

Exit codes: 0 success, 1 usage error, 2 input format error, 3 structural
or validation error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import attention as att
from . import masks as mk
from . import probe as pb
from . import toytask as tt
from . import treebank as tb
from .errors import FormatError, NumericError, StructureError
from .rng import spawn

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FORMAT = 2
EXIT_STRUCTURE = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Experiment settings; every key may appear in the JSON config file."""

    # masks
    max_dist: int = 15
    tree_kinds: tuple[str, ...] = (tb.DEPENDENCY, tb.CONSTITUENCY)
    self_loops: bool = True
    literal_sibling: bool = True
    prune_empty: bool = False
    # model
    mode: str = att.ADDITIVE
    d_model: int = 32
    heads: int = 4
    d_head: int = 8
    d_ff: int = 64
    layers: int = 1
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    # probe
    probe_rank: int | None = None  # default: embedding width
    probe_lr: float = 0.02
    probe_epochs: int = 200
    probe_batch_size: int = 8
    probe_split: float = 0.8
    # toy task
    toy_task: str = "root_distance_parity"
    toy_k: int = 1
    toy_sizes: tuple[int, int, int] = (2000, 200, 500)
    toy_n_range: tuple[int, int] = (5, 10)
    toy_epochs: int = 3
    toy_step: float = 0.5
    toy_max_dist: int = 6
    toy_modes: tuple[str, ...] = ("syntax", "random", "full")


_LIST_FIELDS = {"tree_kinds", "seeds", "toy_sizes", "toy_n_range", "toy_modes"}


def load_config(path: str | None) -> RunConfig:
    config = RunConfig()
    if path is None:
        return config
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise FormatError(f"config {path} must hold a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    for key, value in payload.items():
        if key in _LIST_FIELDS:
            if not isinstance(value, list):
                raise UsageError(f"config key {key} must be a JSON array")
            value = tuple(value)
        setattr(config, key, value)
    return config


def mask_config(config: RunConfig) -> mk.MaskConfig:
    return mk.MaskConfig(
        max_dist=config.max_dist,
        self_loops=config.self_loops,
        literal_sibling=config.literal_sibling,
        prune_empty=config.prune_empty,
    )


# ---------------------------------------------------------------------------
# Input loading helpers


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path} is not UTF-8: {exc}") from None


def _load_tree_docs(paths, kinds) -> list:
    """Load one canonical tree JSON document per configured kind and align
    sentences positionally. Returns a list of per-sentence tree groups."""
    if len(paths) != len(kinds):
        raise UsageError(
            f"expected {len(kinds)} tree file(s) for kinds {list(kinds)}, got {len(paths)}"
        )
    docs = []
    for path, kind in zip(paths, kinds):
        trees = tb.trees_from_json(_read_text(path))
        for idx, tree in enumerate(trees):
            if tree.kind != kind:
                raise StructureError(
                    f"{path}: sentence {idx} is a {tree.kind} tree, expected {kind}"
                )
            tb.check_valid(tree)
        docs.append(trees)
    lengths = {len(doc) for doc in docs}
    if len(lengths) != 1:
        raise StructureError(f"tree files disagree on sentence count: {sorted(lengths)}")
    return [tuple(doc[i] for doc in docs) for i in range(lengths.pop())]


def _select_source(groups, pair: bool, sentence: int):
    if pair:
        if len(groups) % 2 != 0:
            raise StructureError(
                f"--pair needs an even number of sentences, got {len(groups)}"
            )
        n_units = len(groups) // 2
        if not 0 <= sentence < n_units:
            raise UsageError(f"--sentence {sentence} out of range (have {n_units} pairs)")
        return tb.SentencePair(first=groups[2 * sentence], second=groups[2 * sentence + 1])
    if not 0 <= sentence < len(groups):
        raise UsageError(f"--sentence {sentence} out of range (have {len(groups)} sentences)")
    return groups[sentence]


def _write_output(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_parse(args) -> int:
    text = _read_text(args.input)
    if args.format == "conllu":
        trees = tb.parse_conllu(text)
    else:
        trees = tb.parse_ptb(text)
    for tree in trees:
        tb.check_valid(tree)
    _write_output(args.out, tb.trees_to_json(trees) + "\n")
    return EXIT_OK


def cmd_masks(args) -> int:
    config = load_config(args.config)
    if args.max_dist is not None:
        config.max_dist = args.max_dist
    if args.prune_empty:
        config.prune_empty = True
    if args.kinds:
        config.tree_kinds = tuple(args.kinds.split(","))
    groups = _load_tree_docs(args.inputs, config.tree_kinds)
    source = _select_source(groups, args.pair, args.sentence)
    mask_set = mk.build_mask_set(source, mask_config(config))
    out = mk.mask_set_to_json(mask_set) + "\n"
    _write_output(args.out, out)
    print(f"{len(mask_set)} masks", file=sys.stderr)
    return EXIT_OK


def cmd_attend(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.kinds:
        config.tree_kinds = tuple(args.kinds.split(","))
    groups = _load_tree_docs(args.inputs, config.tree_kinds)
    source = _select_source(groups, args.pair, args.sentence)
    mask_set = mk.build_mask_set(source, mask_config(config))

    if args.params:
        params, header = att.load_checkpoint(args.params)
        if params.d_model != config.d_model and args.config:
            raise StructureError(
                f"checkpoint d_model {params.d_model} != config d_model {config.d_model}"
            )
        d_model = params.d_model
    else:
        params = att.init_block_params(
            config.d_model, config.heads, config.d_head, config.d_ff, spawn(config.seed, "params")
        )
        d_model = config.d_model

    n = mask_set.n
    h = spawn(config.seed, "attend-embeddings").uniform(-1.0, 1.0, size=(n, d_model))
    dump = att.attention_maps(h, mask_set, params, config.mode)
    _write_output(args.out, json.dumps(dump, separators=(",", ":")) + "\n")
    return EXIT_OK


def _load_embeddings(path: str) -> list[tuple[str, np.ndarray]]:
    try:
        payload = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(payload, list):
        raise FormatError(f"{path}: embeddings document must be a JSON array")
    out = []
    for idx, item in enumerate(payload):
        if not isinstance(item, dict) or "vectors" not in item:
            raise FormatError(f"{path}: entry {idx} must be an object with 'vectors'")
        vectors = np.asarray(item["vectors"], dtype=np.float64)
        if vectors.ndim != 2:
            raise FormatError(f"{path}: entry {idx} vectors must be a 2-d array")
        out.append((str(item.get("id", idx)), vectors))
    return out


def cmd_probe(args) -> int:
    config = load_config(args.config)
    embeddings = _load_embeddings(args.embeddings)
    trees = tb.trees_from_json(_read_text(args.trees))
    for tree in trees:
        tb.check_valid(tree)
    if len(trees) != len(embeddings):
        raise StructureError(
            f"{len(embeddings)} embedding entries for {len(trees)} trees"
        )
    sentences = [(sid, vec, tree) for (sid, vec), tree in zip(embeddings, trees)]
    n_train = int(round(config.probe_split * len(sentences)))
    if not 0 < n_train < len(sentences):
        raise StructureError(
            f"probe_split {config.probe_split} leaves no train or no eval sentences"
        )
    train, held_out = sentences[:n_train], sentences[n_train:]
    d_model = train[0][1].shape[1]
    probe_config = pb.ProbeConfig(
        rank=config.probe_rank or d_model,
        learning_rate=config.probe_lr,
        epochs=config.probe_epochs,
        batch_size=config.probe_batch_size,
        seed=config.seed,
    )
    b = pb.train_probe([(vec, tree) for _, vec, tree in train], probe_config)
    rows = pb.evaluate_probe(b, held_out)
    _write_output(args.out, pb.report_tsv(rows))
    return EXIT_OK


def cmd_toytrain(args) -> int:
    config = load_config(args.config)
    dataset = tt.make_dataset(
        config.toy_task,
        tuple(config.toy_sizes),
        config.seed,
        n_range=tuple(config.toy_n_range),
        k=config.toy_k,
    )
    all_metrics = []
    for mode in config.toy_modes:
        experiment = tt.ExperimentConfig(
            mask_mode=mode,
            layers=config.layers,
            d_model=config.d_model,
            heads=config.heads,
            d_head=config.d_head,
            d_ff=config.d_ff,
            max_dist=config.toy_max_dist,
            step_size=config.toy_step,
            epochs=config.toy_epochs,
            seeds=tuple(config.seeds),
            attention_mode=config.mode,
        )
        all_metrics.append(tt.train_toy(experiment, dataset))
    _write_output(args.out, tt.metrics_tsv(all_metrics))
    return EXIT_OK


def cmd_bench(args) -> int:
    config = load_config(args.config)
    n = args.n
    density = args.density
    if n < 1 or not 0.0 <= density <= 1.0:
        raise UsageError("bench needs --n >= 1 and 0 <= --density <= 1")
    rng = spawn(config.seed, "bench")
    dense = rng.random((n, n)) < density
    np.fill_diagonal(dense, True)  # no degenerate rows
    mask = mk.Mask.from_dense(
        mk.MaskSpec(category=mk.SIBLING, distance=1, tree_kind=tb.DEPENDENCY), dense
    )
    d_head = config.d_head
    q = rng.normal(size=(n, d_head))
    k = rng.normal(size=(n, d_head))
    v = rng.normal(size=(n, d_head))

    t0 = time.perf_counter()
    dense_out, _ = att.masked_attention(q, k, v, mask, mode=att.ADDITIVE)
    dense_time = time.perf_counter() - t0
    t0 = time.perf_counter()
    sparse = att.sparse_masked_attention(q, k, v, mask)
    sparse_time = time.perf_counter() - t0

    if sparse.visited_pairs != mask.ones_count:
        raise StructureError(
            f"sparse path visited {sparse.visited_pairs} pairs, mask has {mask.ones_count} ones"
        )
    max_err = float(np.abs(sparse.output - dense_out).max())
    if max_err > 1e-9:
        raise NumericError(f"sparse/dense outputs differ by {max_err:.3e} > 1e-9")

    lines = ["path\tn\tones\tvisited_pairs\twall_time_s"]
    lines.append(f"dense\t{n}\t{mask.ones_count}\t{n * n}\t{dense_time:.6f}")
    lines.append(f"sparse\t{n}\t{mask.ones_count}\t{sparse.visited_pairs}\t{sparse_time:.6f}")
    _write_output(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and dispatch


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_CONFIG_HELP = """config file keys and defaults:
  masks:  max_dist=15  tree_kinds=["dependency","constituency"]  self_loops=true
          literal_sibling=true  prune_empty=false
  model:  mode="additive"  d_model=32 heads=4 d_head=8 d_ff=64 layers=1
          seed=0  seeds=[0,1,2,3,4]
  probe:  probe_rank=null (embedding width)  probe_lr=0.02  probe_epochs=200
          probe_batch_size=8  probe_split=0.8
  toy:    toy_task="root_distance_parity"  toy_k=1  toy_sizes=[2000,200,500]
          toy_n_range=[5,10]  toy_epochs=3  toy_step=0.5  toy_max_dist=6
          toy_modes=["syntax","random","full"]
Flags override config values. Unknown config keys are rejected."""


def build_parser() -> _Parser:
    parser = _Parser(
        prog="treeattn",
        description="Syntax-tree attention masks: parse trees, build masks, run the "
        "masked/topical attention block, probe embeddings, train toy ablations.",
        epilog=_CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="tree text to canonical tree JSON")
    p.add_argument("--format", choices=("conllu", "ptb"), required=True)
    p.add_argument("--out", default=None, help="output file (default stdout)")
    p.add_argument("input")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("masks", help="emit the mask-set JSON for one sentence or pair")
    p.add_argument("--config", default=None)
    p.add_argument("--max-dist", type=int, default=None, dest="max_dist")
    p.add_argument("--kinds", default=None, help="comma-separated tree kinds, config override")
    p.add_argument("--pair", action="store_true", help="treat sentences (2i, 2i+1) as pairs")
    p.add_argument("--sentence", type=int, default=0, help="sentence (or pair) index")
    p.add_argument("--prune-empty", action="store_true", dest="prune_empty")
    p.add_argument("--out", default=None)
    p.add_argument("inputs", nargs="+", help="one canonical tree JSON file per tree kind")
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("attend", help="attention-map JSON dump for one sentence or pair")
    p.add_argument("--config", default=None)
    p.add_argument("--params", default=None, help="parameter checkpoint file")
    p.add_argument("--seed", type=int, default=None, help="seeded init when no checkpoint")
    p.add_argument("--kinds", default=None)
    p.add_argument("--pair", action="store_true")
    p.add_argument("--sentence", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_attend)

    p = sub.add_parser("probe", help="train the structural probe and report UUAS/Spearman")
    p.add_argument("--config", default=None)
    p.add_argument("--embeddings", required=True, help="JSON: [{id, vectors}, ...]")
    p.add_argument("--trees", required=True, help="canonical dependency tree JSON")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("toytrain", help="run the toy ablation and emit metrics TSV")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_toytrain)

    p = sub.add_parser("bench", help="sparse vs dense attention timing TSV")
    p.add_argument("--config", default=None)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--density", type=float, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except StructureError as exc:
        print(f"structure error: {exc}", file=sys.stderr)
        return EXIT_STRUCTURE
    except NumericError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run_cli())
