"""Token layout for the multi-view sequence.

Images are cut into patch_px x patch_px blocks, one token each, row-major.
A full multi-view sequence holds 13L tokens in the fixed order
[noise v0..v5 | cond v0..v5 | ref], where L is the per-modality token count
of a single view and the ref block is shared by all views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NOISE",
    "COND",
    "REF",
    "TokenLayout",
    "patchify",
    "unpatchify",
    "assign_part_groups",
    "assemble_single_view_batch",
    "flatten_multiview",
    "build_layout",
]

N_VIEWS = 6

NOISE, COND, REF = 0, 1, 2
_MODALITY_NAMES = {NOISE: "noise", COND: "cond", REF: "ref"}


@dataclass(frozen=True)
class TokenLayout:
    """Map from position in the 13L sequence to (modality, view, grid, parts).

    modality: (13L,) in {NOISE, COND, REF}. view: (13L,) in [0,6), -1 for ref
    tokens. row/col: (13L,) grid cell, valid for every token. part_sets:
    tuple of frozensets of part indices (empty for background-only patches).
    """

    tokens_per_view: int
    grid_side: int
    modality: np.ndarray
    view: np.ndarray
    row: np.ndarray
    col: np.ndarray
    part_sets: tuple[frozenset[int], ...]
    n_views: int = N_VIEWS

    def __post_init__(self):
        n = self.n_tokens
        for name in ("modality", "view", "row", "col"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.int64))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        if len(self.part_sets) != n:
            raise ValueError("part_sets length must equal token count")

    @property
    def n_tokens(self) -> int:
        # [noise x views | cond x views | ref] blocks
        return (2 * self.n_views + 1) * self.tokens_per_view

    def block(self, modality: int, view: int | None = None) -> np.ndarray:
        """Indices of one modality block, optionally restricted to a view."""
        sel = self.modality == modality
        if view is not None:
            sel &= self.view == view
        return np.flatnonzero(sel)

    def to_json(self) -> dict:
        return {
            "tokens_per_view": self.tokens_per_view,
            "grid_side": self.grid_side,
            "tokens": [
                {
                    "modality": _MODALITY_NAMES[int(self.modality[i])],
                    "view": int(self.view[i]) if self.view[i] >= 0 else None,
                    "row": int(self.row[i]),
                    "col": int(self.col[i]),
                    "parts": sorted(self.part_sets[i]),
                }
                for i in range(self.n_tokens)
            ],
        }


def patchify(image: np.ndarray, patch_px: int, embed: np.ndarray | None = None) -> np.ndarray:
    """Cut an (H, W, 3) image into row-major patch tokens and embed them.

    embed is a (patch_px^2 * 3, C) matrix; None keeps raw flattened patches
    (identity embedding, C = patch_px^2 * 3).
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if h % patch_px or w % patch_px:
        raise ValueError(f"image side {h}x{w} not divisible by patch_px {patch_px}")
    gh, gw = h // patch_px, w // patch_px
    patches = (
        image.reshape(gh, patch_px, gw, patch_px, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(gh * gw, patch_px * patch_px * 3)
    )
    if embed is None:
        return patches
    embed = np.asarray(embed, dtype=np.float64)
    if embed.shape[0] != patches.shape[1]:
        raise ValueError(
            f"embed expects input dim {embed.shape[0]}, patches have {patches.shape[1]}"
        )
    return patches @ embed


def unpatchify(tokens: np.ndarray, patch_px: int, grid_side: int) -> np.ndarray:
    """Inverse of identity-embedded patchify: (L, patch_px^2*3) -> (H, W, 3)."""
    tokens = np.asarray(tokens, dtype=np.float64)
    return (
        tokens.reshape(grid_side, grid_side, patch_px, patch_px, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(grid_side * patch_px, grid_side * patch_px, 3)
    )


def assign_part_groups(part_id_map: np.ndarray, patch_px: int) -> list[frozenset[int]]:
    """Per-token part-label sets, row-major over the patch grid.

    A token's set holds every nonzero part id occurring among its patch's
    pixels; an all-background patch gets the empty set.
    """
    part_id_map = np.asarray(part_id_map)
    h, w = part_id_map.shape
    if h % patch_px or w % patch_px:
        raise ValueError(f"map side {h}x{w} not divisible by patch_px {patch_px}")
    gh, gw = h // patch_px, w // patch_px
    out = []
    for r in range(gh):
        for c in range(gw):
            block = part_id_map[
                r * patch_px : (r + 1) * patch_px, c * patch_px : (c + 1) * patch_px
            ]
            out.append(frozenset(int(p) for p in np.unique(block) if p != 0))
    return out


def assemble_single_view_batch(
    noise: np.ndarray, cond: np.ndarray, ref: np.ndarray
) -> np.ndarray:
    """Stack per-view [noise | cond | ref] sequences into a (6, 3L, C) batch.

    noise/cond are (6, L, C); ref is a single (L, C) replicated to all views.
    """
    noise = np.asarray(noise, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if noise.shape != cond.shape or noise.shape[0] != N_VIEWS:
        raise ValueError(f"noise/cond must both be (6, L, C), got {noise.shape} vs {cond.shape}")
    if ref.shape != noise.shape[1:]:
        raise ValueError(f"ref must be (L, C) = {noise.shape[1:]}, got {ref.shape}")
    ref_tiled = np.broadcast_to(ref, (N_VIEWS,) + ref.shape)
    return np.concatenate([noise, cond, ref_tiled], axis=1)


def flatten_multiview(batch: np.ndarray) -> np.ndarray:
    """(6, 3L, C) single-view batch -> (13L, C) multi-view sequence.

    Output order is [noise v0..v5 | cond v0..v5 | ref], where the ref block
    is the arithmetic mean of the six per-view ref slices.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[0] != N_VIEWS or batch.shape[1] % 3:
        raise ValueError(f"expected (6, 3L, C) batch, got {batch.shape}")
    length = batch.shape[1] // 3
    noise = batch[:, :length].reshape(N_VIEWS * length, -1)
    cond = batch[:, length : 2 * length].reshape(N_VIEWS * length, -1)
    ref = batch[:, 2 * length :].mean(axis=0)
    return np.concatenate([noise, cond, ref], axis=0)


def build_layout(
    grid_side: int,
    part_sets_per_view: list[list[frozenset[int]]],
    ref_part_sets: list[frozenset[int]] | None = None,
) -> TokenLayout:
    """Construct the TokenLayout from per-view token part sets.

    part_sets_per_view: one list of L frozensets per view (normally 6, from
    assign_part_groups), used for both the noise and cond blocks of each
    view. Ref tokens carry empty part sets unless ref_part_sets is given.
    """
    n_views = len(part_sets_per_view)
    if n_views < 1:
        raise ValueError("need part sets for at least one view")
    length = grid_side * grid_side
    for sets in part_sets_per_view:
        if len(sets) != length:
            raise ValueError(f"each view needs {length} part sets")
    if ref_part_sets is None:
        ref_part_sets = [frozenset()] * length

    modality, view, row, col, parts = [], [], [], [], []
    grid_rows = np.repeat(np.arange(grid_side), grid_side)
    grid_cols = np.tile(np.arange(grid_side), grid_side)
    for mod in (NOISE, COND):
        for v in range(n_views):
            modality.extend([mod] * length)
            view.extend([v] * length)
            row.extend(grid_rows)
            col.extend(grid_cols)
            parts.extend(part_sets_per_view[v])
    modality.extend([REF] * length)
    view.extend([-1] * length)
    row.extend(grid_rows)
    col.extend(grid_cols)
    parts.extend(ref_part_sets)

    return TokenLayout(
        tokens_per_view=length,
        grid_side=grid_side,
        modality=np.array(modality),
        view=np.array(view),
        row=np.array(row),
        col=np.array(col),
        part_sets=tuple(parts),
        n_views=n_views,
    )
