"""Admissibility masks and masked attention.

The mask builders mirror the routing structure of the multi-view stage:
  - intra-view: full attention among the noise+cond tokens of one view
  - part-aligned (PAA): noise/cond tokens sharing at least one part label
  - noise-cond (n-c): union of intra-view and PAA
  - cond-ref (c-r): full attention within cond+ref, all views
  - CRA: union of n-c and c-r; noise never reaches ref directly

Masks are built from token-index groups and materialized as a boolean
matrix; every construction here is symmetric.
"""

from __future__ import annotations

import numpy as np

from .tokens import COND, NOISE, REF, TokenLayout

__all__ = [
    "AttentionMask",
    "build_intra_view_mask",
    "build_paa_mask",
    "build_nc_mask",
    "build_cr_mask",
    "build_cra_mask",
    "mask_union",
    "masked_attention",
    "masked_attention_vjp",
]


class AttentionMask:
    """Symmetric token-pair admissibility structure.

    Built from full-attention groups (every pair within a group is
    admissible, including self-pairs). The boolean matrix view is the
    logical contract; `groups` records how it was assembled.
    """

    def __init__(self, n_tokens: int, groups: list[np.ndarray] | None = None):
        self.n_tokens = n_tokens
        self.groups: list[np.ndarray] = []
        self._matrix = np.zeros((n_tokens, n_tokens), dtype=bool)
        for g in groups or []:
            self.add_group(g)

    def add_group(self, indices) -> None:
        idx = np.asarray(indices, dtype=np.int64)
        if len(idx) == 0:
            return
        if idx.min() < 0 or idx.max() >= self.n_tokens:
            raise ValueError("group index out of range")
        self.groups.append(idx)
        self._matrix[np.ix_(idx, idx)] = True

    @property
    def matrix(self) -> np.ndarray:
        """(n, n) boolean admissibility matrix (read-only view)."""
        m = self._matrix.view()
        m.setflags(write=False)
        return m

    def admissible_counts(self) -> np.ndarray:
        return self._matrix.sum(axis=1)

    def density(self, subset: np.ndarray | None = None) -> float:
        m = self._matrix if subset is None else self._matrix[np.ix_(subset, subset)]
        return float(m.mean()) if m.size else 0.0

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AttentionMask)
            and self.n_tokens == other.n_tokens
            and bool(np.array_equal(self._matrix, other._matrix))
        )

    def __or__(self, other: "AttentionMask") -> "AttentionMask":
        return mask_union(self, other)


def build_intra_view_mask(layout: TokenLayout) -> AttentionMask:
    """Full attention among the noise and cond tokens of each single view."""
    mask = AttentionMask(layout.n_tokens)
    nc = (layout.modality == NOISE) | (layout.modality == COND)
    for v in range(layout.n_views):
        mask.add_group(np.flatnonzero(nc & (layout.view == v)))
    return mask


def build_paa_mask(layout: TokenLayout) -> AttentionMask:
    """Part-aligned attention: noise/cond tokens whose part sets intersect.

    One group per part label, spanning all views. Background tokens (empty
    part set) join no group.
    """
    mask = AttentionMask(layout.n_tokens)
    nc = (layout.modality == NOISE) | (layout.modality == COND)
    by_part: dict[int, list[int]] = {}
    for i in np.flatnonzero(nc):
        for k in layout.part_sets[i]:
            by_part.setdefault(k, []).append(i)
    for k in sorted(by_part):
        mask.add_group(np.array(by_part[k]))
    return mask


def build_nc_mask(layout: TokenLayout) -> AttentionMask:
    """Noise-cond pathway: part-aligned union intra-view."""
    return mask_union(build_paa_mask(layout), build_intra_view_mask(layout))


def build_cr_mask(layout: TokenLayout) -> AttentionMask:
    """Cond-ref pathway: full attention within cond+ref tokens of all views."""
    mask = AttentionMask(layout.n_tokens)
    mask.add_group(np.flatnonzero((layout.modality == COND) | (layout.modality == REF)))
    return mask


def build_cra_mask(layout: TokenLayout) -> AttentionMask:
    """Full routing mask: (PAA ∪ intra-view) ∪ (cond-ref)."""
    return mask_union(build_nc_mask(layout), build_cr_mask(layout))


def mask_union(a: AttentionMask, b: AttentionMask) -> AttentionMask:
    """Pairwise OR of two masks over the same token sequence."""
    if a.n_tokens != b.n_tokens:
        raise ValueError(f"mask length mismatch: {a.n_tokens} vs {b.n_tokens}")
    out = AttentionMask(a.n_tokens)
    out.groups = list(a.groups) + list(b.groups)
    out._matrix = a._matrix | b._matrix
    return out


def _checked_scores(q: np.ndarray, k: np.ndarray, mask: AttentionMask):
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape[-1] == 0:
        raise ValueError("head dim must be positive")
    if not (np.isfinite(q).all() and np.isfinite(k).all()):
        raise ValueError("non-finite attention inputs")
    n, d = q.shape[-2], q.shape[-1]
    if mask.n_tokens != n:
        raise ValueError(f"mask covers {mask.n_tokens} tokens, inputs have {n}")
    scale = 1.0 / np.sqrt(d)
    scores = (q @ np.swapaxes(k, -1, -2)) * scale
    return q, k, scores, scale


def _masked_softmax(scores: np.ndarray, admissible: np.ndarray) -> np.ndarray:
    """Row softmax restricted to admissible entries; all-masked rows -> 0."""
    neg = np.where(admissible, scores, -np.inf)
    row_max = neg.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(admissible, np.exp(neg - row_max), 0.0)
    z = e.sum(axis=-1, keepdims=True)
    return np.divide(e, z, out=np.zeros_like(e), where=z > 0)


def masked_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    mask: AttentionMask,
    return_empty_rows: bool = False,
):
    """Softmax attention restricted to a mask's admissible pairs.

    q, k, v: (..., n, d) with matching leading dims (e.g. a heads axis).
    Rows with no admissible key return the zero vector; their indices are
    returned when return_empty_rows is set.
    """
    q, k, scores, _ = _checked_scores(q, k, mask)
    v = np.asarray(v, dtype=np.float64)
    if not np.isfinite(v).all():
        raise ValueError("non-finite attention inputs")
    weights = _masked_softmax(scores, mask.matrix)
    out = weights @ v
    if return_empty_rows:
        empty = np.flatnonzero(~mask.matrix.any(axis=1))
        return out, empty
    return out


def masked_attention_vjp(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    mask: AttentionMask,
    grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic gradients of masked_attention w.r.t. q, k, v.

    Standard softmax-attention backward; masked entries carry zero weight so
    they contribute nothing to any gradient.
    """
    q, k, scores, scale = _checked_scores(q, k, mask)
    v = np.asarray(v, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    weights = _masked_softmax(scores, mask.matrix)

    grad_v = np.swapaxes(weights, -1, -2) @ grad_out
    grad_w = grad_out @ np.swapaxes(v, -1, -2)
    inner = (grad_w * weights).sum(axis=-1, keepdims=True)
    grad_scores = weights * (grad_w - inner)
    grad_q = (grad_scores @ k) * scale
    grad_k = (np.swapaxes(grad_scores, -1, -2) @ q) * scale
    return grad_q, grad_k, grad_v
