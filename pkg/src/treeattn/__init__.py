"""Syntax-tree attention masks and the machinery around them: treebank
parsing, mask families, masked/topical attention with analytic gradients,
structural probing, and synthetic ablation experiments."""

from .attention import (
    ADDITIVE,
    MULTIPLICATIVE,
    AttentionParams,
    BlockParams,
    TopicalParams,
    attention_maps,
    block_backward,
    block_forward,
    grad_check,
    init_block_params,
    load_checkpoint,
    masked_attention,
    multi_head_masked,
    save_checkpoint,
    sparse_masked_attention,
    topical_attention,
)
from .errors import DegenerateRowError, FormatError, NumericError, StructureError
from .masks import (
    Alignment,
    Mask,
    MaskConfig,
    MaskSet,
    MaskSpec,
    ancestor_distance,
    build_mask,
    build_mask_set,
    expand_to_subwords,
    mask_set_to_json,
    token_distance_matrix,
)
from .probe import (
    ProbeConfig,
    path_indicator_embeddings,
    probe_distances,
    spearman,
    train_probe,
    uuas,
)
from .toytask import (
    ExperimentConfig,
    ToyDataset,
    gen_random_tree,
    make_dataset,
    train_toy,
)
from .treebank import (
    CONSTITUENCY,
    DEPENDENCY,
    SentencePair,
    SyntaxTree,
    parse_conllu,
    parse_ptb,
    tree_to_json,
    trees_from_json,
    validate,
)

__version__ = "0.1.0"
