"""Masked self-attention, topical aggregation, and the full encoder block.

All tensors are float64 numpy arrays with fixed axis meanings: token rows,
feature columns, a leading sub-network axis for stacked per-mask outputs,
and a leading head axis inside multi-head attention. Every exposed
operation checks its result for non-finite values.

Two masking modes exist:

  additive        masked score positions are set to -1e9 before the row
                  softmax, then masked weights are zeroed exactly and the
                  row renormalized. Default: masked pairs get weight 0.
  multiplicative  the literal form: softmax((Q K^T ⊙ M) / sqrt(d)). Masked
                  pairs keep score 0 and therefore nonzero weight; kept
                  behind a flag for fidelity experiments.

The block runs every mask of a MaskSet through multi-head masked attention
with shared parameters, aggregates the per-mask outputs with a trainable
task query (topical attention), and finishes with the usual residual +
LayerNorm + feed-forward + residual + LayerNorm wiring. ``block_backward``
computes exact analytic gradients for everything.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRowError, NumericError, StructureError
from .masks import Mask, MaskSet

MASKED_SCORE = -1e9
_LN_EPS = 1e-12

ADDITIVE = "additive"
MULTIPLICATIVE = "multiplicative"
MODES = (ADDITIVE, MULTIPLICATIVE)


def _as_matrix(name: str, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise StructureError(f"{name} must be 2-d, got shape {arr.shape}")
    return arr


def _check_finite(name: str, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.isfinite(arr).all():
            raise NumericError(f"{name} produced non-finite values")


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise StructureError(f"unknown masking mode {mode!r}; expected one of {MODES}")


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_backward(weights: np.ndarray, dweights: np.ndarray) -> np.ndarray:
    return weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# Parameters


@dataclass(frozen=True)
class AttentionParams:
    """Per-head projections, shared by every sub-network of a layer."""

    w_q: np.ndarray  # (heads, d_model, d_head)
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray  # (heads * d_head, d_model)

    @property
    def heads(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_model(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_head(self) -> int:
        return self.w_q.shape[2]


@dataclass(frozen=True)
class TopicalParams:
    q_task: np.ndarray  # (d_model,) trainable task query
    w_k: np.ndarray  # (d_model, d_model)
    w_v: np.ndarray

    @property
    def d_model(self) -> int:
        return self.q_task.shape[0]


@dataclass(frozen=True)
class BlockParams:
    attention: AttentionParams
    topical: TopicalParams
    w_ff1: np.ndarray  # (d_model, d_ff)
    b_ff1: np.ndarray  # (d_ff,)
    w_ff2: np.ndarray  # (d_ff, d_model)
    b_ff2: np.ndarray  # (d_model,)
    ln1_gain: np.ndarray  # (d_model,)
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray

    @property
    def d_model(self) -> int:
        return self.attention.d_model

    @property
    def d_ff(self) -> int:
        return self.w_ff1.shape[1]


def param_arrays(params: BlockParams) -> list[tuple[str, np.ndarray]]:
    """The declared flat parameter order used by checkpoints and training."""
    return [
        ("w_q", params.attention.w_q),
        ("w_k", params.attention.w_k),
        ("w_v", params.attention.w_v),
        ("w_o", params.attention.w_o),
        ("q_task", params.topical.q_task),
        ("topical_w_k", params.topical.w_k),
        ("topical_w_v", params.topical.w_v),
        ("w_ff1", params.w_ff1),
        ("b_ff1", params.b_ff1),
        ("w_ff2", params.w_ff2),
        ("b_ff2", params.b_ff2),
        ("ln1_gain", params.ln1_gain),
        ("ln1_bias", params.ln1_bias),
        ("ln2_gain", params.ln2_gain),
        ("ln2_bias", params.ln2_bias),
    ]


def params_from_dict(arrays: dict[str, np.ndarray]) -> BlockParams:
    return BlockParams(
        attention=AttentionParams(
            w_q=arrays["w_q"], w_k=arrays["w_k"], w_v=arrays["w_v"], w_o=arrays["w_o"]
        ),
        topical=TopicalParams(
            q_task=arrays["q_task"], w_k=arrays["topical_w_k"], w_v=arrays["topical_w_v"]
        ),
        w_ff1=arrays["w_ff1"],
        b_ff1=arrays["b_ff1"],
        w_ff2=arrays["w_ff2"],
        b_ff2=arrays["b_ff2"],
        ln1_gain=arrays["ln1_gain"],
        ln1_bias=arrays["ln1_bias"],
        ln2_gain=arrays["ln2_gain"],
        ln2_bias=arrays["ln2_bias"],
    )


def n_parameters(params: BlockParams) -> int:
    return sum(arr.size for _, arr in param_arrays(params))


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_block_params(
    d_model: int, heads: int, d_head: int, d_ff: int, rng: np.random.Generator
) -> BlockParams:
    """Seeded initialization: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for
    projections and biases, gain 1 / bias 0 for the LayerNorms. Draw order
    is the declared parameter order, so results depend only on the rng."""
    if heads * d_head != d_model:
        raise StructureError(f"d_model {d_model} != heads {heads} * d_head {d_head}")
    return BlockParams(
        attention=AttentionParams(
            w_q=_uniform(rng, d_model, (heads, d_model, d_head)),
            w_k=_uniform(rng, d_model, (heads, d_model, d_head)),
            w_v=_uniform(rng, d_model, (heads, d_model, d_head)),
            w_o=_uniform(rng, heads * d_head, (heads * d_head, d_model)),
        ),
        topical=TopicalParams(
            q_task=_uniform(rng, d_model, (d_model,)),
            w_k=_uniform(rng, d_model, (d_model, d_model)),
            w_v=_uniform(rng, d_model, (d_model, d_model)),
        ),
        w_ff1=_uniform(rng, d_model, (d_model, d_ff)),
        b_ff1=_uniform(rng, d_model, (d_ff,)),
        w_ff2=_uniform(rng, d_ff, (d_ff, d_model)),
        b_ff2=_uniform(rng, d_ff, (d_model,)),
        ln1_gain=np.ones(d_model),
        ln1_bias=np.zeros(d_model),
        ln2_gain=np.ones(d_model),
        ln2_bias=np.zeros(d_model),
    )


# ---------------------------------------------------------------------------
# Single-mask attention


def masked_attention(q, k, v, mask: Mask, mode: str = ADDITIVE):
    """Scaled dot-product attention restricted by a mask.

    Returns (output, weights). Weight rows sum to 1; in additive mode the
    weights at masked positions are exactly 0 and rows with any masked
    entry are renormalized (rows with none are left untouched, so an
    all-ones mask reproduces vanilla attention bit for bit).
    """
    _check_mode(mode)
    q = _as_matrix("Q", q)
    k = _as_matrix("K", k)
    v = _as_matrix("V", v)
    n, d_head = q.shape
    if k.shape != (n, d_head) or v.shape[0] != n:
        raise StructureError(
            f"Q {q.shape}, K {k.shape}, V {v.shape} are not conformable"
        )
    if mask.n != n:
        raise StructureError(f"mask covers {mask.n} tokens but inputs have {n}")

    dense = mask.dense
    raw = q @ k.T
    scale = math.sqrt(d_head)
    if mode == MULTIPLICATIVE:
        weights = softmax_rows((raw * dense) / scale)
    else:
        empty = ~dense.any(axis=1)
        if empty.any():
            row = int(np.flatnonzero(empty)[0]) + 1
            raise DegenerateRowError(
                f"additive attention: mask row {row} of {n} has no allowed keys"
            )
        weights = softmax_rows(np.where(dense, raw / scale, MASKED_SCORE))
        needs = ~dense.all(axis=1)
        if needs.any():
            zeroed = np.where(dense, weights, 0.0)
            sums = zeroed.sum(axis=1, keepdims=True)
            weights = np.where(needs[:, None], zeroed / sums, weights)
    out = weights @ v
    _check_finite("masked_attention", out, weights)
    return out, weights


def multi_head_masked(h, params: AttentionParams, mask: Mask, mode: str = ADDITIVE):
    """One sub-network: per-head masked attention over projections of H,
    concatenated and sent through the output projection."""
    h = _as_matrix("H", h)
    if h.shape[1] != params.d_model:
        raise StructureError(
            f"H has {h.shape[1]} features but parameters expect {params.d_model}"
        )
    per_head = []
    for i in range(params.heads):
        out, _ = masked_attention(
            h @ params.w_q[i], h @ params.w_k[i], h @ params.w_v[i], mask, mode
        )
        per_head.append(out)
    result = np.concatenate(per_head, axis=1) @ params.w_o
    _check_finite("multi_head_masked", result)
    return result


def topical_attention(h_stack, params: TopicalParams):
    """Aggregate sub-network outputs per token with the trainable task query.

    `h_stack` is (n, m, d_model): for each token, one row per sub-network.
    Returns (output (n, d_model), weights (n, m)); each weight row sums to 1.
    """
    h_stack = np.asarray(h_stack, dtype=np.float64)
    if h_stack.ndim != 3:
        raise StructureError(f"stack must be (n, m, d_model), got {h_stack.shape}")
    n, m, d_model = h_stack.shape
    if m < 1:
        raise StructureError("topical attention needs at least one sub-network")
    if d_model != params.d_model:
        raise StructureError(
            f"stack features {d_model} do not match parameters {params.d_model}"
        )
    keys = h_stack @ params.w_k
    values = h_stack @ params.w_v
    logits = keys @ params.q_task / math.sqrt(d_model)
    weights = softmax_rows(logits)
    out = np.einsum("nm,nmd->nd", weights, values)
    _check_finite("topical_attention", out, weights)
    return out, weights


# ---------------------------------------------------------------------------
# LayerNorm


def _layer_norm_forward(x, gain, bias):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc**2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def _layer_norm_backward(cache, dout):
    xhat, inv, gain = cache
    dgain = (dout * xhat).sum(axis=0)
    dbias = dout.sum(axis=0)
    dxhat = dout * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# Full block


@dataclass
class BlockCache:
    """Intermediates of one block_forward, consumed by block_backward."""

    mode: str
    h: np.ndarray
    q: np.ndarray  # (heads, n, d_head)
    k: np.ndarray
    v: np.ndarray
    dense: np.ndarray  # (m, n, n) bool mask stack
    weights: np.ndarray  # (m, heads, n, n) final attention weights
    soft: np.ndarray  # softmax output before zeroing/renormalization
    renorm_sums: np.ndarray | None  # additive mode row sums, (m, heads, n, 1)
    needs_renorm: np.ndarray | None  # (m, n) rows with any masked entry
    concat: np.ndarray  # (m, n, heads * d_head)
    stack_t: np.ndarray  # (n, m, d_model)
    keys: np.ndarray  # (n, m, d_model)
    values: np.ndarray
    tweights: np.ndarray  # (n, m)
    x1: np.ndarray
    a: np.ndarray  # tanh activations
    ln1: tuple
    ln2: tuple
    params: BlockParams
    out_shape: tuple


def block_forward(h, mask_set: MaskSet, params: BlockParams, mode: str = ADDITIVE):
    """Run the syntax block: one masked multi-head pass per mask (shared
    parameters), topical aggregation across the per-mask outputs, then
    residual + LayerNorm, feed-forward (tanh), residual + LayerNorm.

    Returns (output (n, d_model), cache). The per-mask passes are computed
    together on a stacked mask axis; results match composing
    multi_head_masked and topical_attention mask by mask.
    """
    _check_mode(mode)
    h = _as_matrix("H", h)
    n, d_model = h.shape
    if not mask_set.masks:
        raise StructureError("mask set is empty")
    if mask_set.n != n:
        raise StructureError(f"mask set covers {mask_set.n} tokens but H has {n} rows")
    if d_model != params.d_model:
        raise StructureError(
            f"H has {d_model} features but parameters expect {params.d_model}"
        )
    att = params.attention
    heads, d_head = att.heads, att.d_head
    scale = math.sqrt(d_head)
    m = len(mask_set.masks)

    q = np.einsum("nd,hde->hne", h, att.w_q)
    k = np.einsum("nd,hde->hne", h, att.w_k)
    v = np.einsum("nd,hde->hne", h, att.w_v)
    raw = np.einsum("hne,hme->hnm", q, k)  # (heads, n, n)

    dense = np.stack([mask.dense for mask in mask_set.masks])  # (m, n, n)
    if mode == ADDITIVE:
        row_counts = dense.sum(axis=2)
        if (row_counts == 0).any():
            j, i = np.argwhere(row_counts == 0)[0]
            raise DegenerateRowError(
                f"additive attention: mask {j + 1} of {m} has no allowed keys in row {i + 1}"
            )
        scores = np.where(dense[:, None], raw[None] / scale, MASKED_SCORE)
        soft = softmax_rows(scores)
        needs = ~dense.all(axis=2)  # (m, n)
        zeroed = np.where(dense[:, None], soft, 0.0)
        sums = zeroed.sum(axis=3, keepdims=True)
        weights = np.where(needs[:, None, :, None], zeroed / sums, soft)
        renorm_sums, needs_renorm = sums, needs
    else:
        soft = softmax_rows((raw[None] * dense[:, None]) / scale)
        weights = soft
        renorm_sums, needs_renorm = None, None

    att_out = np.einsum("mhnk,hke->mhne", weights, v)  # (m, heads, n, d_head)
    concat = att_out.transpose(0, 2, 1, 3).reshape(m, n, heads * d_head)
    h_stack = concat @ att.w_o  # (m, n, d_model)
    stack_t = np.ascontiguousarray(h_stack.transpose(1, 0, 2))  # (n, m, d_model)

    top = params.topical
    keys = stack_t @ top.w_k
    values = stack_t @ top.w_v
    logits = keys @ top.q_task / math.sqrt(d_model)
    tweights = softmax_rows(logits)
    h_topical = np.einsum("nm,nmd->nd", tweights, values)

    x1, ln1 = _layer_norm_forward(h + h_topical, params.ln1_gain, params.ln1_bias)
    a = np.tanh(x1 @ params.w_ff1 + params.b_ff1)
    f = a @ params.w_ff2 + params.b_ff2
    out, ln2 = _layer_norm_forward(x1 + f, params.ln2_gain, params.ln2_bias)
    _check_finite("block_forward", out)

    cache = BlockCache(
        mode=mode,
        h=h,
        q=q,
        k=k,
        v=v,
        dense=dense,
        weights=weights,
        soft=soft,
        renorm_sums=renorm_sums,
        needs_renorm=needs_renorm,
        concat=concat,
        stack_t=stack_t,
        keys=keys,
        values=values,
        tweights=tweights,
        x1=x1,
        a=a,
        ln1=ln1,
        ln2=ln2,
        params=params,
        out_shape=out.shape,
    )
    return out, cache


def block_backward(cache: BlockCache, grad_out):
    """Exact gradients of a scalar loss through block_forward.

    `grad_out` is dLoss/dOutput from the matching forward cache. Returns
    (grad_H, BlockParams holding the gradient of every parameter).
    Multiplicative mode treats the mask as a constant.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != cache.out_shape:
        raise StructureError(
            f"grad_output shape {grad_out.shape} does not match cached forward "
            f"output {cache.out_shape}"
        )
    params = cache.params
    att = params.attention
    top = params.topical
    n, d_model = cache.h.shape
    heads, d_head = att.heads, att.d_head
    m = cache.dense.shape[0]
    scale = math.sqrt(d_head)

    # second LayerNorm, feed-forward, first LayerNorm
    dy2, dg2, db2 = _layer_norm_backward(cache.ln2, grad_out)
    dw_ff2 = cache.a.T @ dy2
    db_ff2 = dy2.sum(axis=0)
    du = (dy2 @ params.w_ff2.T) * (1.0 - cache.a**2)
    dw_ff1 = cache.x1.T @ du
    db_ff1 = du.sum(axis=0)
    dx1 = dy2 + du @ params.w_ff1.T
    dy1, dg1, db1 = _layer_norm_backward(cache.ln1, dx1)
    dh = dy1.copy()  # residual branch into the input

    # topical attention
    dtw = np.einsum("nd,nmd->nm", dy1, cache.values)
    dvalues = cache.tweights[:, :, None] * dy1[:, None, :]
    dlogits = _softmax_backward(cache.tweights, dtw)
    dq_task = np.einsum("nm,nmd->d", dlogits, cache.keys) / math.sqrt(d_model)
    dkeys = dlogits[:, :, None] * (top.q_task / math.sqrt(d_model))
    dwk_top = np.einsum("nmd,nme->de", cache.stack_t, dkeys)
    dwv_top = np.einsum("nmd,nme->de", cache.stack_t, dvalues)
    dstack_t = dkeys @ top.w_k.T + dvalues @ top.w_v.T
    dh_stack = dstack_t.transpose(1, 0, 2)  # (m, n, d_model)

    # output projection and head split
    dw_o = np.einsum("mnf,mnd->fd", cache.concat, dh_stack)
    dconcat = dh_stack @ att.w_o.T
    datt = dconcat.reshape(m, n, heads, d_head).transpose(0, 2, 1, 3)

    # attention weights and values
    dweights = np.einsum("mhne,hke->mhnk", datt, cache.v)
    dv = np.einsum("mhnk,mhne->hke", cache.weights, datt)

    if cache.mode == ADDITIVE:
        # weights = (soft ⊙ M) / sums on renormalized rows, soft elsewhere;
        # masked score positions are constants and get no gradient.
        dnorm = (
            dweights - (dweights * cache.weights).sum(axis=3, keepdims=True)
        ) / cache.renorm_sums
        dsoft = np.where(
            cache.needs_renorm[:, None, :, None],
            np.where(cache.dense[:, None], dnorm, 0.0),
            dweights,
        )
        dscores = _softmax_backward(cache.soft, dsoft)
        draw = np.where(cache.dense[:, None], dscores, 0.0).sum(axis=0) / scale
    else:
        dscores = _softmax_backward(cache.soft, dweights)
        draw = (dscores * cache.dense[:, None]).sum(axis=0) / scale

    dq = np.einsum("hnm,hme->hne", draw, cache.k)
    dk = np.einsum("hnm,hne->hme", draw, cache.q)
    dw_q = np.einsum("nd,hne->hde", cache.h, dq)
    dw_k = np.einsum("nd,hne->hde", cache.h, dk)
    dw_v = np.einsum("nd,hne->hde", cache.h, dv)
    dh += np.einsum("hne,hde->nd", dq, att.w_q)
    dh += np.einsum("hme,hde->md", dk, att.w_k)
    dh += np.einsum("hke,hde->kd", dv, att.w_v)
    _check_finite("block_backward", dh)

    grads = BlockParams(
        attention=AttentionParams(w_q=dw_q, w_k=dw_k, w_v=dw_v, w_o=dw_o),
        topical=TopicalParams(q_task=dq_task, w_k=dwk_top, w_v=dwv_top),
        w_ff1=dw_ff1,
        b_ff1=db_ff1,
        w_ff2=dw_ff2,
        b_ff2=db_ff2,
        ln1_gain=dg1,
        ln1_bias=db1,
        ln2_gain=dg2,
        ln2_bias=db2,
    )
    return dh, grads


# ---------------------------------------------------------------------------
# Sparse execution path


@dataclass
class SparseAttention:
    output: np.ndarray
    row_weights: tuple[np.ndarray, ...]  # aligned with mask.rows
    visited_pairs: int


def sparse_masked_attention(q, k, v, mask: Mask) -> SparseAttention:
    """Additive-mode attention touching only the allowed (query, key) pairs.

    The visited-pair counter equals the number of ones in the mask; the
    result matches the dense additive path to within accumulated rounding.
    """
    q = _as_matrix("Q", q)
    k = _as_matrix("K", k)
    v = _as_matrix("V", v)
    n, d_head = q.shape
    if k.shape != (n, d_head) or v.shape[0] != n:
        raise StructureError(f"Q {q.shape}, K {k.shape}, V {v.shape} are not conformable")
    if mask.n != n:
        raise StructureError(f"mask covers {mask.n} tokens but inputs have {n}")
    scale = math.sqrt(d_head)

    out = np.zeros((n, v.shape[1]))
    row_weights = []
    visited = 0
    for i, cols in enumerate(mask.rows):
        if not cols:
            raise DegenerateRowError(f"sparse attention: mask row {i + 1} of {n} is empty")
        idx = np.asarray(cols, dtype=int)
        scores = (k[idx] @ q[i]) / scale
        visited += len(cols)
        e = np.exp(scores - scores.max())
        w = e / e.sum()
        out[i] = w @ v[idx]
        row_weights.append(w)
    _check_finite("sparse_masked_attention", out)
    return SparseAttention(output=out, row_weights=tuple(row_weights), visited_pairs=visited)


# ---------------------------------------------------------------------------
# Gradient checking


@dataclass
class GradCheckReport:
    per_param: dict[str, float]
    max_rel_error: float
    worst_param: str


def grad_check(f, params: dict[str, np.ndarray], analytic: dict[str, np.ndarray],
               eps: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of scalar f(params) to central differences.

    Relative error per coordinate is |g_a - g_n| / max(1, |g_a|, |g_n|).
    f must be deterministic; non-finite evaluations raise NumericError.
    """
    work = {name: np.array(arr, dtype=np.float64) for name, arr in params.items()}
    per_param: dict[str, float] = {}
    for name in params:
        grad = np.asarray(analytic[name], dtype=np.float64)
        arr = work[name]
        if grad.shape != arr.shape:
            raise StructureError(
                f"analytic gradient for {name} has shape {grad.shape}, expected {arr.shape}"
            )
        worst = 0.0
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = float(f(work))
            flat[idx] = orig - eps
            f_minus = float(f(work))
            flat[idx] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericError(f"non-finite evaluation while perturbing {name}[{idx}]")
            g_n = (f_plus - f_minus) / (2.0 * eps)
            rel = abs(gflat[idx] - g_n) / max(1.0, abs(gflat[idx]), abs(g_n))
            worst = max(worst, rel)
        per_param[name] = worst
    worst_param = max(per_param, key=per_param.get) if per_param else ""
    return GradCheckReport(
        per_param=per_param,
        max_rel_error=max(per_param.values()) if per_param else 0.0,
        worst_param=worst_param,
    )


# ---------------------------------------------------------------------------
# Checkpoints and attention-map dumps

_CHECKPOINT_FORMAT = "treeattn-block-v1"


def save_checkpoint(path, params: BlockParams, seed=None, mode: str = ADDITIVE) -> None:
    """JSON header line (dims, seed, mode) followed by all parameters as a
    flat little-endian float64 array in the declared order."""
    header = {
        "format": _CHECKPOINT_FORMAT,
        "d_model": params.d_model,
        "heads": params.attention.heads,
        "d_head": params.attention.d_head,
        "d_ff": params.d_ff,
        "seed": seed,
        "mode": mode,
    }
    payload = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in param_arrays(params)
    )
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def _param_shapes(d_model: int, heads: int, d_head: int, d_ff: int) -> list[tuple[str, tuple]]:
    return [
        ("w_q", (heads, d_model, d_head)),
        ("w_k", (heads, d_model, d_head)),
        ("w_v", (heads, d_model, d_head)),
        ("w_o", (heads * d_head, d_model)),
        ("q_task", (d_model,)),
        ("topical_w_k", (d_model, d_model)),
        ("topical_w_v", (d_model, d_model)),
        ("w_ff1", (d_model, d_ff)),
        ("b_ff1", (d_ff,)),
        ("w_ff2", (d_ff, d_model)),
        ("b_ff2", (d_model,)),
        ("ln1_gain", (d_model,)),
        ("ln1_bias", (d_model,)),
        ("ln2_gain", (d_model,)),
        ("ln2_bias", (d_model,)),
    ]


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (BlockParams, header dict)."""
    with open(path, "rb") as fh:
        data = fh.read()
    newline = data.find(b"\n")
    if newline < 0:
        raise StructureError("checkpoint has no header line")
    try:
        header = json.loads(data[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StructureError(f"unreadable checkpoint header: {exc}") from None
    if header.get("format") != _CHECKPOINT_FORMAT:
        raise StructureError(f"unknown checkpoint format {header.get('format')!r}")
    shapes = _param_shapes(header["d_model"], header["heads"], header["d_head"], header["d_ff"])
    flat = np.frombuffer(data[newline + 1 :], dtype="<f8")
    expected = sum(int(np.prod(shape)) for _, shape in shapes)
    if flat.size != expected:
        raise StructureError(
            f"checkpoint payload holds {flat.size} values, expected {expected}"
        )
    arrays = {}
    pos = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        arrays[name] = np.array(flat[pos : pos + size]).reshape(shape)
        pos += size
    return params_from_dict(arrays), header


def attention_maps(h, mask_set: MaskSet, params: BlockParams, mode: str = ADDITIVE) -> dict:
    """Attention-map dump for heatmap plotting: per sub-network the
    head-averaged weight matrix, plus the topical weights per token."""
    _, cache = block_forward(h, mask_set, params, mode)
    head_mean = cache.weights.mean(axis=1)  # (m, n, n)
    return {
        "subnetworks": [
            {"spec": mask.spec.to_obj(), "weights": head_mean[j].tolist()}
            for j, mask in enumerate(mask_set.masks)
        ],
        "topical_weights": cache.tweights.tolist(),
    }
