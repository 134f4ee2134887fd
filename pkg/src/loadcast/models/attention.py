"""Scaled dot-product and multi-head attention.

Each position's response is a softmax-weighted sum of the value vectors at
all (allowed) positions; weights come from query/key dot products scaled by
1/sqrt(dk). All functions accept either single sequences ([L, d]) or batches
([B, L, d]); masks apply identically to every batch element.
"""

from __future__ import annotations

from typing import Mapping, Optional

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import DegenerateAttentionError, ShapeError

__all__ = ["causal_mask", "scaled_dot_attention", "multi_head_attention"]


def causal_mask(length: int) -> np.ndarray:
    """Boolean [length, length] mask allowing position t to see keys <= t."""
    return np.tril(np.ones((length, length), dtype=bool))


def scaled_dot_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: Optional[np.ndarray] = None,
) -> tuple[Tensor, Tensor]:
    """Attention(q, k, v) = softmax(q k^T / sqrt(dk)) v.

    ``mask`` is boolean [Lq, Lk]; True marks keys a query may attend to.
    Masked positions get weight exactly 0. Returns (output, weights).
    """
    dk = q.shape[-1]
    if k.shape[-1] != dk:
        raise ShapeError(f"query/key feature sizes disagree: {q.shape} vs {k.shape}")
    if v.shape[-2] != k.shape[-2]:
        raise ShapeError(f"key/value lengths disagree: {k.shape} vs {v.shape}")
    scores = ad.mul_const(ad.matmul(q, ad.transpose_last(k)), 1.0 / np.sqrt(dk))
    if mask is None:
        weights = ad.softmax(scores, axis=-1)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q.shape[-2], k.shape[-2]):
            raise ShapeError(
                f"mask shape {mask.shape} does not match scores "
                f"({q.shape[-2]}, {k.shape[-2]})"
            )
        if not mask.any(axis=-1).all():
            raise DegenerateAttentionError("attention mask fully masks a query row")
        weights = ad.masked_softmax(scores, mask, axis=-1)
    return ad.matmul(weights, v), weights


def multi_head_attention(
    x_q: Tensor,
    x_kv: Tensor,
    params: Mapping[str, Tensor],
    n_heads: int,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Project, attend per head in d_model/n_heads subspaces, concat, project.

    ``params`` holds w_q/b_q, w_k/b_k, w_v/b_v (projections) and w_o/b_o
    (output projection), each [d_model, d_model] with [d_model] biases.
    """
    d_model = x_q.shape[-1]
    if d_model % n_heads != 0:
        raise ShapeError(f"d_model {d_model} not divisible by n_heads {n_heads}")
    d_head = d_model // n_heads

    q = ad.add_bias(ad.matmul(x_q, params["w_q"]), params["b_q"])
    k = ad.add_bias(ad.matmul(x_kv, params["w_k"]), params["b_k"])
    v = ad.add_bias(ad.matmul(x_kv, params["w_v"]), params["b_v"])

    heads = []
    for h in range(n_heads):
        lo, hi = h * d_head, (h + 1) * d_head
        out, _ = scaled_dot_attention(
            ad.slice_last(q, lo, hi),
            ad.slice_last(k, lo, hi),
            ad.slice_last(v, lo, hi),
            mask,
        )
        heads.append(out)
    merged = heads[0] if n_heads == 1 else ad.concat_last(heads)
    return ad.add_bias(ad.matmul(merged, params["w_o"]), params["b_o"])
