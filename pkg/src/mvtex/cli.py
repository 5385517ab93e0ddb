"""Command-line pipeline driver.

Stages write into `<out>/<stage>/`; later stages read the artifacts of
earlier ones. All randomness flows from the single `seed` config field, so
re-running any stage with the same config reproduces its outputs byte for
byte.

Exit codes: 0 success, 2 input error, 3 state error (an earlier stage is
missing), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import geometry, render, texturing
from .geometry import MeshError
from .imageio import read_png, write_float_raw, write_png
from .model import DiTConfig, DivergenceError, Model, TrainingSample, sample, train
from .tokens import assign_part_groups, build_layout
from .attention import (
    build_cr_mask,
    build_cra_mask,
    build_intra_view_mask,
    build_nc_mask,
    build_paa_mask,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_STATE = 3
EXIT_NUMERIC = 4

BUFFER_NAMES = ("condition", "part", "normal", "ccm", "depth")


class InputError(Exception):
    pass


class StateError(Exception):
    pass


@dataclass
class PipelineConfig:
    mesh: str = ""
    out: str = "out"
    k: int = 6
    seed: int = 0
    resolution: int = 32
    patch_px: int = 8
    heads: int = 6
    blocks_single: int = 1
    blocks_multi: int = 2
    mask_mode: str = "cra"
    margin: float = 0.05
    steps: int = 500
    lr: float = 1e-3
    sample_steps: int = 32
    texture: str = "checker"
    checker_cells: int = 6
    ref_view: int = 0
    atlas_resolution: int = 128
    weight_exponent: float = 2.0
    threads: int = 1

    def dit_config(self) -> DiTConfig:
        return DiTConfig(
            resolution=self.resolution,
            patch_px=self.patch_px,
            heads=self.heads,
            blocks_single=self.blocks_single,
            blocks_multi=self.blocks_multi,
            seed=self.seed,
            mask_mode=self.mask_mode,
        )

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "PipelineConfig":
        values: dict = {}
        if args.config:
            path = Path(args.config)
            if not path.exists():
                raise InputError(f"config file not found: {path}")
            try:
                values.update(json.loads(path.read_text()))
            except json.JSONDecodeError as e:
                raise InputError(f"bad config JSON: {e}") from e
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        for f in fields(cls):
            override = getattr(args, f.name, None)
            if override is not None:
                values[f.name] = override
        if "out" not in values or not values["out"]:
            values["out"] = os.environ.get("MVTEX_OUT", "out")
        cfg = cls(**values)
        if cfg.k < 1:
            raise InputError("k must be >= 1")
        if cfg.resolution % cfg.patch_px:
            raise InputError("resolution must be divisible by patch_px")
        return cfg


def _out(cfg: PipelineConfig, stage: str) -> Path:
    path = Path(cfg.out) / stage
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_segmented(cfg: PipelineConfig) -> geometry.TriMesh:
    obj = Path(cfg.out) / "segment" / "mesh.obj"
    if not obj.exists():
        raise StateError(f"no segmented mesh at {obj}; run `segment` first")
    mesh = geometry.load_mesh(obj)
    return geometry.load_part_sidecar(mesh, obj)


def _gbuffers(cfg: PipelineConfig):
    mesh = _load_segmented(cfg)
    cams = geometry.default_cameras(cfg.resolution)
    return mesh, cams, [render.rasterize(mesh, c) for c in cams]


def _procedural_color(points: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    """Canonical-space procedural texture used for toy targets."""
    if cfg.texture == "checker":
        cells = np.floor(points * cfg.checker_cells).astype(int)
        parity = cells.sum(axis=-1) % 2
        a = np.array([0.9, 0.15, 0.1])
        b = np.array([0.1, 0.3, 0.9])
        return np.where(parity[..., None] == 0, a, b)
    if cfg.texture == "gradient":
        return np.clip(points, 0.0, 1.0)
    raise InputError(f"unknown texture {cfg.texture!r}")


def _target_views(cfg: PipelineConfig, gbuffers) -> np.ndarray:
    views = []
    for gb in gbuffers:
        img = _procedural_color(gb.ccm, cfg)
        views.append(np.where(gb.foreground[..., None], img, 0.0))
    return np.stack(views)


def _layout_for(cfg: PipelineConfig, gbuffers):
    part_sets = [assign_part_groups(gb.part_id, cfg.patch_px) for gb in gbuffers]
    return build_layout(cfg.resolution // cfg.patch_px, part_sets)


def cmd_segment(cfg: PipelineConfig) -> None:
    if not cfg.mesh:
        raise InputError("no mesh path configured")
    if not Path(cfg.mesh).exists():
        raise InputError(f"mesh file not found: {cfg.mesh}")
    mesh = geometry.load_mesh(cfg.mesh)
    mesh = geometry.normalize_to_canonical(mesh, cfg.margin)
    mesh = geometry.segment_parts(mesh, cfg.k, cfg.seed)
    out = _out(cfg, "segment")
    geometry.save_mesh(mesh, out / "mesh.obj")
    print(f"segmented {mesh.n_faces} faces into {cfg.k} parts -> {out}")


def cmd_render(cfg: PipelineConfig) -> None:
    mesh, cams, gbuffers = _gbuffers(cfg)
    out = _out(cfg, "render")
    palette = render.default_palette(cfg.k, cfg.seed)
    for v, gb in enumerate(gbuffers):
        finite = gb.depth[np.isfinite(gb.depth)]
        span = (finite.max() - finite.min()) if finite.size else 1.0
        depth_vis = np.where(
            np.isfinite(gb.depth), (gb.depth - (finite.min() if finite.size else 0)) / max(span, 1e-9), 1.0
        )
        images = {
            "condition": render.condition_image(gb),
            "part": render.part_color_image(gb, palette),
            "normal": 0.5 * gb.normal + 0.5 * gb.foreground[..., None],
            "ccm": gb.ccm,
            "depth": np.repeat(depth_vis[..., None], 3, axis=-1),
        }
        for name, img in images.items():
            write_png(out / f"{v}_{name}.png", img)
        write_float_raw(out / f"{v}_ccm.raw", gb.ccm)
        write_float_raw(out / f"{v}_depth.raw", gb.depth)
    print(f"wrote {6 * len(BUFFER_NAMES)} images -> {out}")


def cmd_masks(cfg: PipelineConfig) -> None:
    _, _, gbuffers = _gbuffers(cfg)
    layout = _layout_for(cfg, gbuffers)
    builders = {
        "intra": build_intra_view_mask(layout),
        "paa": build_paa_mask(layout),
        "nc": build_nc_mask(layout),
        "cr": build_cr_mask(layout),
        "cra": build_cra_mask(layout),
    }
    cra = builders["cra"]
    from .tokens import COND, NOISE, REF

    noise_idx = layout.block(NOISE)
    cond_idx = layout.block(COND)
    ref_idx = layout.block(REF)
    m = cra.matrix
    stats = {
        "n_tokens": layout.n_tokens,
        "per_row_admissible": cra.admissible_counts().tolist(),
        "density": {name: mask.density() for name, mask in builders.items()},
        "paa_density_noise_cond": builders["paa"].density(
            np.concatenate([noise_idx, cond_idx])
        ),
        "noise_ref_pairs": int(m[np.ix_(noise_idx, ref_idx)].sum()),
        "cond_ref_pairs": int(m[np.ix_(cond_idx, ref_idx)].sum()),
    }
    out = _out(cfg, "masks")
    with open(out / "stats.json", "w") as fh:
        json.dump(stats, fh, indent=1, sort_keys=True)
    with open(out / "layout.json", "w") as fh:
        json.dump(layout.to_json(), fh, sort_keys=True)
    vis = np.zeros(m.shape + (3,))
    vis[builders["nc"].matrix] = [0.9, 0.4, 0.1]
    vis[builders["cr"].matrix] = [0.1, 0.5, 0.9]
    vis[builders["nc"].matrix & builders["cr"].matrix] = [0.8, 0.2, 0.8]
    write_png(out / "cra.png", vis)
    print(f"mask stats -> {out} (CRA density {builders['cra'].density():.3f})")


def cmd_train(cfg: PipelineConfig) -> None:
    _, _, gbuffers = _gbuffers(cfg)
    layout = _layout_for(cfg, gbuffers)
    targets = _target_views(cfg, gbuffers)
    cond_images = np.stack([render.condition_image(gb) for gb in gbuffers])
    ref = targets[cfg.ref_view]
    item = TrainingSample.from_images(targets, cond_images, ref, layout, cfg.patch_px)
    model, losses = train([item], cfg.dit_config(), steps=cfg.steps, lr=cfg.lr)
    out = _out(cfg, "train")
    model.save(out / "checkpoint", step=cfg.steps)
    with open(out / "loss.csv", "w") as fh:
        fh.write("step,loss\n")
        for i, value in enumerate(losses):
            fh.write(f"{i},{value:.10g}\n")
    print(f"trained {cfg.steps} steps: loss {losses[0]:.4f} -> {losses[-1]:.4f}")


def _load_checkpoint(cfg: PipelineConfig) -> Model:
    path = Path(cfg.out) / "train" / "checkpoint"
    if not path.with_suffix(".json").exists():
        raise StateError(f"no checkpoint at {path}; run `train` first")
    model, _ = Model.load(path)
    return model


def cmd_sample(cfg: PipelineConfig) -> None:
    model = _load_checkpoint(cfg)
    _, _, gbuffers = _gbuffers(cfg)
    layout = _layout_for(cfg, gbuffers)
    cond_images = np.stack([render.condition_image(gb) for gb in gbuffers])
    ref = _target_views(cfg, gbuffers)[cfg.ref_view]
    images = sample(model, cond_images, ref, layout, steps=cfg.sample_steps, seed=cfg.seed)
    out = _out(cfg, "sample")
    for v in range(6):
        write_png(out / f"{v}_gen.png", images[v])
    print(f"sampled 6 views -> {out}")


def cmd_bake(cfg: PipelineConfig) -> None:
    mesh, cams, gbuffers = _gbuffers(cfg)
    gen_dir = Path(cfg.out) / "sample"
    paths = [gen_dir / f"{v}_gen.png" for v in range(6)]
    if not all(p.exists() for p in paths):
        raise StateError(f"no sampled views in {gen_dir}; run `sample` first")
    images = [read_png(p) for p in paths]
    atlas = texturing.build_charts(mesh, cfg.atlas_resolution)
    atlas = texturing.backproject(images, gbuffers, cams, atlas, cfg.weight_exponent)
    atlas = texturing.inpaint(atlas)
    out = _out(cfg, "bake")
    write_png(out / "atlas.png", atlas.color)
    with open(out / "charts.json", "w") as fh:
        json.dump(atlas.chart_table_json(), fh, sort_keys=True)
    previews = [render.render_textured(mesh, atlas, c) for c in cams]
    for v, img in enumerate(previews):
        write_png(out / f"{v}_preview.png", img)
    print(f"baked atlas -> {out}")


def cmd_eval(cfg: PipelineConfig) -> None:
    _, cams, gbuffers = _gbuffers(cfg)
    gen_dir = Path(cfg.out) / "sample"
    paths = [gen_dir / f"{v}_gen.png" for v in range(6)]
    if all(p.exists() for p in paths):
        images = [read_png(p) for p in paths]
        source = "sampled"
    else:
        images = list(_target_views(cfg, gbuffers))
        source = "ground-truth"
    value, report = texturing.mv_mse(images, gbuffers, cams, return_report=True)
    report["source"] = source
    out = _out(cfg, "eval")
    with open(out / "mv_mse.json", "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    print(f"MV-MSE ({source}) = {value:.6g}")


COMMANDS = {
    "segment": cmd_segment,
    "render": cmd_render,
    "masks": cmd_masks,
    "train": cmd_train,
    "sample": cmd_sample,
    "bake": cmd_bake,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvtex", description="multi-view texture generation pipeline"
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", help="output directory (or MVTEX_OUT env var)")
    parser.add_argument("--mesh", help="input OBJ mesh")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--k", type=int)
    parser.add_argument("--resolution", type=int)
    parser.add_argument("--patch-px", dest="patch_px", type=int)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--sample-steps", dest="sample_steps", type=int)
    parser.add_argument("--mask-mode", dest="mask_mode", choices=["cra", "full"])
    parser.add_argument("--texture", choices=["checker", "gradient"])
    parser.add_argument("--atlas-resolution", dest="atlas_resolution", type=int)
    parser.add_argument("--blocks-single", dest="blocks_single", type=int)
    parser.add_argument("--blocks-multi", dest="blocks_multi", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = PipelineConfig.from_args(args)
        if cfg.threads:
            try:
                from threadpoolctl import threadpool_limits

                threadpool_limits(cfg.threads)
            except ImportError:
                os.environ["OMP_NUM_THREADS"] = str(cfg.threads)
        COMMANDS[args.command](cfg)
    except (InputError, MeshError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except StateError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STATE
    except (DivergenceError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
