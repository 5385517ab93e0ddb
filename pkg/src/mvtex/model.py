"""Two-stage diffusion transformer with a flow-matching objective.

Stage 1 runs full attention independently within each view's
[noise | cond | ref] sequence; stage 2 runs masked attention over the
flattened 13L multi-view sequence under the condition-routed mask. The
patch embedding is the identity (tokens are raw patch pixels), so the
channel count is patch_px^2 * 3 and decoding is an exact unpatchify.

All gradients come from the tape in :mod:`mvtex.autodiff`; the optimizer
is Adam. Training is deterministic given the seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tokens as tok
from .attention import AttentionMask, build_cra_mask
from .autodiff import Tensor, concat, gelu, layer_norm, masked_mha, silu
from .tokens import TokenLayout, patchify, unpatchify

__all__ = [
    "DiTConfig",
    "FlowSample",
    "Model",
    "TrainingSample",
    "flow_matching_loss",
    "train",
    "sample",
    "DivergenceError",
]

N_VIEWS = 6
REF_VIEW_SLOT = N_VIEWS  # positional-encoding slot for view-averaged ref tokens


class DivergenceError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass(frozen=True)
class DiTConfig:
    resolution: int = 32
    patch_px: int = 8
    heads: int = 6
    blocks_single: int = 1
    blocks_multi: int = 2
    time_embed_dim: int = 64
    seed: int = 0
    mask_mode: str = "cra"  # "cra" or "full"

    def __post_init__(self):
        if self.resolution % self.patch_px:
            raise ValueError("resolution must be divisible by patch_px")
        if self.channels % self.heads:
            raise ValueError(
                f"channels {self.channels} not divisible by heads {self.heads}"
            )
        if self.mask_mode not in ("cra", "full"):
            raise ValueError(f"unknown mask_mode {self.mask_mode!r}")

    @property
    def channels(self) -> int:
        # identity patch embedding: one channel per patch pixel component
        return self.patch_px * self.patch_px * 3

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @property
    def grid_side(self) -> int:
        return self.resolution // self.patch_px

    @property
    def tokens_per_view(self) -> int:
        return self.grid_side * self.grid_side


@dataclass(frozen=True)
class FlowSample:
    """One training point on the straight noise-to-data path."""

    z_0: np.ndarray
    eps: np.ndarray
    t: float
    z_t: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.z_0.shape != self.eps.shape:
            raise ValueError("z_0 and eps must share a shape")
        if not (0.0 <= self.t <= 1.0):
            raise ValueError(f"timestep must be in [0, 1], got {self.t}")
        object.__setattr__(self, "z_t", (1.0 - self.t) * self.z_0 + self.t * self.eps)

    @property
    def velocity_target(self) -> np.ndarray:
        return self.eps - self.z_0


def _sinusoid_features(values: np.ndarray, dim: int, period: float) -> np.ndarray:
    """(n,) integers -> (n, dim) interleaved sin/cos features."""
    half = dim // 2
    freqs = (2.0 * np.pi / period) * (2.0 ** np.arange(half))
    angles = values[:, None] * freqs[None, :]
    out = np.zeros((len(values), dim))
    out[:, :half] = np.sin(angles)
    out[:, half : 2 * half] = np.cos(angles)
    return out


def positional_encoding(layout: TokenLayout, channels: int) -> np.ndarray:
    """Additive encoding of (view, row, col, modality) per token, (13L, C).

    Ref tokens use the reserved view slot so the six averaged slices agree.
    """
    q = channels // 4
    views = np.where(layout.view < 0, REF_VIEW_SLOT, layout.view).astype(np.float64)
    chunks = [
        _sinusoid_features(views, q, period=8.0),
        _sinusoid_features(layout.row.astype(np.float64), q, period=4.0 * layout.grid_side),
        _sinusoid_features(layout.col.astype(np.float64), q, period=4.0 * layout.grid_side),
        _sinusoid_features(layout.modality.astype(np.float64), channels - 3 * q, period=8.0),
    ]
    return np.concatenate(chunks, axis=1)


def timestep_features(t: float, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = t * freqs * 1000.0
    out = np.zeros(dim)
    out[:half] = np.sin(angles)
    out[half : 2 * half] = np.cos(angles)
    return out


class Model:
    """Parameter store plus the two-stage forward pass."""

    def __init__(self, config: DiTConfig, params: dict[str, Tensor] | None = None):
        self.config = config
        self.params = params if params is not None else self._init_params()
        self._full_masks: dict[int, AttentionMask] = {}

    # -- parameters --------------------------------------------------------

    def _init_params(self) -> dict[str, Tensor]:
        cfg = self.config
        c = cfg.channels
        rng = np.random.default_rng(cfg.seed)
        params: dict[str, Tensor] = {}

        def par(name, array):
            params[name] = Tensor(array, requires_grad=True)

        def init_block(prefix):
            for w in ("wq", "wk", "wv"):
                par(f"{prefix}.{w}", rng.normal(0.0, 0.02, (c, c)))
                par(f"{prefix}.{w}_b", np.zeros(c))
            # zero-init output projections: the block starts as identity
            par(f"{prefix}.wo", np.zeros((c, c)))
            par(f"{prefix}.wo_b", np.zeros(c))
            par(f"{prefix}.ln1_g", np.ones(c))
            par(f"{prefix}.ln1_b", np.zeros(c))
            par(f"{prefix}.ln2_g", np.ones(c))
            par(f"{prefix}.ln2_b", np.zeros(c))
            par(f"{prefix}.fc1", rng.normal(0.0, 0.02, (c, 4 * c)))
            par(f"{prefix}.fc1_b", np.zeros(4 * c))
            par(f"{prefix}.fc2", np.zeros((4 * c, c)))
            par(f"{prefix}.fc2_b", np.zeros(c))
            # timestep modulation -> (shift1, scale1, shift2, scale2)
            par(f"{prefix}.mod_w", np.zeros((cfg.time_embed_dim, 4 * c)))
            par(f"{prefix}.mod_b", np.zeros(4 * c))

        par("time.fc1", rng.normal(0.0, 0.02, (cfg.time_embed_dim, cfg.time_embed_dim)))
        par("time.fc1_b", np.zeros(cfg.time_embed_dim))
        par("time.fc2", rng.normal(0.0, 0.02, (cfg.time_embed_dim, cfg.time_embed_dim)))
        par("time.fc2_b", np.zeros(cfg.time_embed_dim))
        for i in range(cfg.blocks_single):
            init_block(f"sv{i}")
        for i in range(cfg.blocks_multi):
            init_block(f"mv{i}")
        par("head.ln_g", np.ones(c))
        par("head.ln_b", np.zeros(c))
        # timestep modulation of the head -> (shift, scale, z_t scale, cond scale)
        par("head.mod_w", np.zeros((cfg.time_embed_dim, 4 * c)))
        par("head.mod_b", np.zeros(4 * c))
        par("head.w", np.zeros((c, c)))
        # unnormalized shortcuts from the raw latents: the velocity target
        # (z_t - z_0)/t is linear in z_t and in the condition, with
        # t-dependent coefficients that layer norm would otherwise erase
        par("head.skip_w", np.zeros((c, c)))
        par("head.cond_w", np.zeros((c, c)))
        par("head.w_b", np.zeros(c))
        return params

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    # -- forward -----------------------------------------------------------

    def _full_mask(self, n: int) -> AttentionMask:
        if n not in self._full_masks:
            self._full_masks[n] = AttentionMask(n, [np.arange(n)])
        return self._full_masks[n]

    def _time_embedding(self, t: float) -> Tensor:
        feats = Tensor(timestep_features(t, self.config.time_embed_dim))
        p = self.params
        hidden = silu(feats.reshape(1, -1) @ p["time.fc1"] + p["time.fc1_b"])
        return silu(hidden @ p["time.fc2"] + p["time.fc2_b"])

    def _block(self, prefix: str, x: Tensor, mask: AttentionMask, t_emb: Tensor) -> Tensor:
        cfg = self.config
        p = self.params
        c, h, d = cfg.channels, cfg.heads, cfg.head_dim
        n = x.shape[0]

        mod = t_emb @ p[f"{prefix}.mod_w"] + p[f"{prefix}.mod_b"]
        shift1, scale1 = mod[0, :c], mod[0, c : 2 * c]
        shift2, scale2 = mod[0, 2 * c : 3 * c], mod[0, 3 * c :]

        normed = layer_norm(x, p[f"{prefix}.ln1_g"], p[f"{prefix}.ln1_b"])
        normed = normed * (1.0 + scale1) + shift1

        def heads_of(w, b):
            proj = normed @ p[w] + p[b]
            return proj.reshape(n, h, d).transpose(1, 0, 2)

        q = heads_of(f"{prefix}.wq", f"{prefix}.wq_b")
        k = heads_of(f"{prefix}.wk", f"{prefix}.wk_b")
        v = heads_of(f"{prefix}.wv", f"{prefix}.wv_b")
        attn = masked_mha(q, k, v, mask).transpose(1, 0, 2).reshape(n, c)
        x = x + attn @ p[f"{prefix}.wo"] + p[f"{prefix}.wo_b"]

        normed2 = layer_norm(x, p[f"{prefix}.ln2_g"], p[f"{prefix}.ln2_b"])
        normed2 = normed2 * (1.0 + scale2) + shift2
        hidden = gelu(normed2 @ p[f"{prefix}.fc1"] + p[f"{prefix}.fc1_b"])
        return x + hidden @ p[f"{prefix}.fc2"] + p[f"{prefix}.fc2_b"]

    def single_view_stage(self, views: list[Tensor], t_emb: Tensor) -> list[Tensor]:
        """Run each (3L, C) per-view sequence through the full-attention blocks."""
        mask = self._full_mask(views[0].shape[0])
        out = []
        for seq in views:
            for i in range(self.config.blocks_single):
                seq = self._block(f"sv{i}", seq, mask, t_emb)
            out.append(seq)
        return out

    def multi_view_stage(self, seq: Tensor, mask: AttentionMask, t_emb: Tensor) -> Tensor:
        """Run the (13L, C) flattened sequence through the masked blocks."""
        if seq.shape[0] != mask.n_tokens:
            raise ValueError("sequence length does not match the mask")
        for i in range(self.config.blocks_multi):
            seq = self._block(f"mv{i}", seq, mask, t_emb)
        return seq

    def mask_for(self, layout: TokenLayout) -> AttentionMask:
        if self.config.mask_mode == "cra":
            return build_cra_mask(layout)
        return self._full_mask(layout.n_tokens)

    def forward(
        self,
        z_t: Tensor,
        cond: np.ndarray,
        ref: np.ndarray,
        t: float,
        layout: TokenLayout,
        mask: AttentionMask | None = None,
    ) -> Tensor:
        """Predict the (6, L, C) velocity for the noise latents.

        z_t: (6, L, C) noisy latents (Tensor so probes can differentiate
        through inputs). cond: (6, L, C) condition latents. ref: (L, C).
        """
        cfg = self.config
        length = cfg.tokens_per_view
        if mask is None:
            mask = self.mask_for(layout)
        t_emb = self._time_embedding(t)
        pos = positional_encoding(layout, cfg.channels)

        # assemble per-view [noise | cond | ref] with positional encodings
        pos_noise = pos[layout.block(tok.NOISE)].reshape(N_VIEWS, length, -1)
        pos_cond = pos[layout.block(tok.COND)].reshape(N_VIEWS, length, -1)
        pos_ref = pos[layout.block(tok.REF)]
        views = []
        for v in range(N_VIEWS):
            seq = concat(
                [
                    z_t[v] + pos_noise[v],
                    Tensor(cond[v] + pos_cond[v]),
                    Tensor(ref + pos_ref),
                ],
                axis=0,
            )
            views.append(seq)

        views = self.single_view_stage(views, t_emb)

        noise_parts = [seq[:length] for seq in views]
        cond_parts = [seq[length : 2 * length] for seq in views]
        ref_mean = views[0][2 * length :]
        for seq in views[1:]:
            ref_mean = ref_mean + seq[2 * length :]
        ref_mean = ref_mean * (1.0 / N_VIEWS)
        seq13 = concat(noise_parts + cond_parts + [ref_mean], axis=0)

        seq13 = self.multi_view_stage(seq13, mask, t_emb)

        p = self.params
        c = cfg.channels
        mod = t_emb @ p["head.mod_w"] + p["head.mod_b"]
        out = layer_norm(seq13, p["head.ln_g"], p["head.ln_b"])
        out = out * (1.0 + mod[0, c : 2 * c]) + mod[0, :c]
        out = (out @ p["head.w"])[: N_VIEWS * length]
        flat_z = z_t.reshape(N_VIEWS * length, c)
        flat_cond = cond.reshape(N_VIEWS * length, c)
        out = out + (flat_z * (1.0 + mod[0, 2 * c : 3 * c])) @ p["head.skip_w"]
        out = out + (Tensor(flat_cond) * (1.0 + mod[0, 3 * c :])) @ p["head.cond_w"]
        out = out + p["head.w_b"]
        return out.reshape(N_VIEWS, length, cfg.channels)

    # -- checkpointing -----------------------------------------------------

    def save(self, path: str | Path, step: int = 0) -> None:
        """Write a flat little-endian float64 blob plus a JSON manifest."""
        path = Path(path)
        manifest: dict = {"config": asdict(self.config), "step": step, "params": {}}
        offset = 0
        with open(path.with_suffix(".bin"), "wb") as fh:
            for name in sorted(self.params):
                arr = np.ascontiguousarray(self.params[name].data, dtype="<f8")
                fh.write(arr.tobytes())
                manifest["params"][name] = {"offset": offset, "shape": list(arr.shape)}
                offset += arr.size
        with open(path.with_suffix(".json"), "w") as fh:
            json.dump(manifest, fh, indent=1)

    @classmethod
    def load(cls, path: str | Path) -> tuple["Model", int]:
        path = Path(path)
        with open(path.with_suffix(".json")) as fh:
            manifest = json.load(fh)
        config = DiTConfig(**manifest["config"])
        blob = np.frombuffer(open(path.with_suffix(".bin"), "rb").read(), dtype="<f8")
        params = {}
        for name, meta in manifest["params"].items():
            size = int(np.prod(meta["shape"])) if meta["shape"] else 1
            data = blob[meta["offset"] : meta["offset"] + size].reshape(meta["shape"])
            params[name] = Tensor(data.copy(), requires_grad=True)
        return cls(config, params), manifest["step"]


def flow_matching_loss(pred: Tensor, z_0: np.ndarray, eps: np.ndarray) -> Tensor:
    """Mean squared error of the predicted velocity against (eps - z_0)."""
    if pred.shape != z_0.shape or z_0.shape != eps.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.shape}, z_0 {z_0.shape}, eps {eps.shape}"
        )
    diff = pred - Tensor(eps - z_0)
    return (diff * diff).mean()


@dataclass
class TrainingSample:
    """Latent-space view of one training item."""

    z_0: np.ndarray          # (6, L, C) clean target latents
    cond: np.ndarray         # (6, L, C)
    ref: np.ndarray          # (L, C)
    layout: TokenLayout

    @classmethod
    def from_images(
        cls,
        target_views: np.ndarray,
        cond_images: np.ndarray,
        ref_image: np.ndarray,
        layout: TokenLayout,
        patch_px: int,
    ) -> "TrainingSample":
        z_0 = np.stack([patchify(img, patch_px) for img in target_views])
        cond = np.stack([patchify(img, patch_px) for img in cond_images])
        ref = patchify(ref_image, patch_px)
        return cls(z_0, cond, ref, layout)


class Adam:
    """Adam with fixed defaults; state keyed by parameter name."""

    def __init__(self, params: dict[str, Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / (1 - b1**self.t)
            vhat = self.v[name] / (1 - b2**self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _clip_gradients(params: dict[str, Tensor], max_norm: float) -> None:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale


def train(
    dataset: list[TrainingSample],
    config: DiTConfig,
    steps: int = 500,
    lr: float = 1e-3,
    callback=None,
) -> tuple[Model, list[float]]:
    """Overfit-style flow-matching training; deterministic given config.seed.

    Returns the trained model and the per-step loss curve. Raises
    DivergenceError if the loss goes non-finite.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    model = Model(config)
    opt = Adam(model.params, lr=lr)
    rng = np.random.default_rng(config.seed)
    warmup = min(max(steps // 10, 1), 50)
    losses: list[float] = []
    for step in range(steps):
        # linear warmup into a cosine decay
        if step < warmup:
            opt.lr = lr * (step + 1) / warmup
        else:
            frac = (step - warmup) / max(steps - warmup, 1)
            opt.lr = lr * 0.5 * (1.0 + np.cos(np.pi * frac))
        item = dataset[step % len(dataset)]
        t = float(rng.uniform())
        eps = rng.standard_normal(item.z_0.shape)
        fs = FlowSample(item.z_0, eps, t)
        model.zero_grad()
        pred = model.forward(Tensor(fs.z_t), item.cond, item.ref, t, item.layout)
        loss = flow_matching_loss(pred, item.z_0, eps)
        value = float(loss.data)
        if not np.isfinite(value):
            raise DivergenceError(
                f"loss became non-finite at step {step} (t={t:.4f}); "
                "reduce the learning rate"
            )
        loss.backward()
        _clip_gradients(model.params, max_norm=1.0)
        opt.step()
        losses.append(value)
        if callback is not None:
            callback(step, value)
    return model, losses


def sample(
    model: Model,
    cond_images: np.ndarray,
    ref_image: np.ndarray,
    layout: TokenLayout,
    steps: int = 32,
    seed: int = 0,
) -> np.ndarray:
    """Euler-integrate the learned velocity from t=1 to t=0; returns images.

    Output is (6, H, W, 3) clipped to [0,1].
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = model.config
    cond = np.stack([patchify(img, cfg.patch_px) for img in cond_images])
    ref = patchify(ref_image, cfg.patch_px)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((N_VIEWS, cfg.tokens_per_view, cfg.channels))
    mask = model.mask_for(layout)
    dt = 1.0 / steps
    for i in range(steps):
        t = 1.0 - i * dt
        vel = model.forward(Tensor(z), cond, ref, t, layout, mask=mask).data
        z = z - dt * vel
    images = np.stack(
        [unpatchify(z[v], cfg.patch_px, cfg.grid_side) for v in range(N_VIEWS)]
    )
    return np.clip(images, 0.0, 1.0)
