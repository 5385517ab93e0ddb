"""Geometry-calibrated attention for multi-view texture generation, desk scale.

Pipeline: segment a mesh into parts, render geometry condition images from
six orthographic views, build part-aligned / condition-routed attention
masks over the multi-view token sequence, train a small two-stage diffusion
transformer with a flow-matching objective, bake the generated views into a
texture atlas, and score cross-view consistency with MV-MSE.
"""

from .attention import (
    AttentionMask,
    build_cr_mask,
    build_cra_mask,
    build_intra_view_mask,
    build_nc_mask,
    build_paa_mask,
    mask_union,
    masked_attention,
)
from .geometry import (
    Camera,
    MeshError,
    TriMesh,
    default_cameras,
    load_mesh,
    normalize_to_canonical,
    save_mesh,
    segment_parts,
)
from .model import DiTConfig, FlowSample, Model, TrainingSample, flow_matching_loss, sample, train
from .render import GBuffer, condition_image, part_color_image, rasterize, render_textured
from .texturing import TextureAtlas, backproject, build_charts, inpaint, mv_mse
from .tokens import (
    TokenLayout,
    assemble_single_view_batch,
    assign_part_groups,
    build_layout,
    flatten_multiview,
    patchify,
    unpatchify,
)

__version__ = "0.1.0"
