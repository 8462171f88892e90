"""Style-content disentangled font synthesis: content encoder, style encoder, mixer.

The mixer injects the style vector through feature-wise affine modulation at
every decoding stage, so any style vector yields a glyph image in [0, 1],
which is what makes the blend-weight watermark encoder possible: the set of
images reachable by varying the style vector (content and weights fixed) is
the model's font-style manifold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from fontmark.config import (
    load_checkpoint,
    save_checkpoint,
    seeded_rng,
    state_dict_checksum,
)
from fontmark.glyphs import GLYPH_SIZE, Vocabulary


@dataclass
class FontModelConfig:
    style_dim: int = 128
    base_channels: int = 32
    image_size: int = GLYPH_SIZE

    def to_dict(self):
        return {
            "style_dim": self.style_dim,
            "base_channels": self.base_channels,
            "image_size": self.image_size,
        }


def to_batch(images) -> torch.Tensor:
    """Numpy (H,W), (N,H,W) or tensor -> float32 tensor (N,1,H,W)."""
    if isinstance(images, torch.Tensor):
        t = images.float()
    else:
        t = torch.from_numpy(np.ascontiguousarray(images)).float()
    if t.ndim == 2:
        t = t[None]
    if t.ndim == 3:
        t = t[:, None]
    if t.ndim != 4:
        raise ValueError(f"expected 2-4 dims, got shape {tuple(images.shape)}")
    return t


class ContentEncoder(nn.Module):
    """80x80 glyph -> (4C, 10, 10) spatial content feature map."""

    def __init__(self, cfg: FontModelConfig):
        super().__init__()
        c = cfg.base_channels
        self.out_channels = 4 * c
        self.net = nn.Sequential(
            nn.Conv2d(1, c, 3, 2, 1), nn.InstanceNorm2d(c, affine=True), nn.ReLU(),
            nn.Conv2d(c, 2 * c, 3, 2, 1), nn.InstanceNorm2d(2 * c, affine=True), nn.ReLU(),
            nn.Conv2d(2 * c, 4 * c, 3, 2, 1), nn.InstanceNorm2d(4 * c, affine=True), nn.ReLU(),
            nn.Conv2d(4 * c, 4 * c, 3, 1, 1),
        )

    def forward(self, x):
        if x.shape[-2:] != (GLYPH_SIZE, GLYPH_SIZE):
            raise ValueError(f"content encoder expects {GLYPH_SIZE}x{GLYPH_SIZE}, got {tuple(x.shape)}")
        return self.net(x)


class StyleEncoder(nn.Module):
    """80x80 glyph -> d-dimensional global style vector (no normalization layers)."""

    def __init__(self, cfg: FontModelConfig):
        super().__init__()
        c = cfg.base_channels
        self.conv = nn.Sequential(
            nn.Conv2d(1, c, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(c, 2 * c, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(2 * c, 4 * c, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(4 * c, 4 * c, 3, 2, 1), nn.ReLU(),
        )
        self.head = nn.Linear(4 * c, cfg.style_dim)

    def forward(self, x):
        if x.shape[-2:] != (GLYPH_SIZE, GLYPH_SIZE):
            raise ValueError(f"style encoder expects {GLYPH_SIZE}x{GLYPH_SIZE}, got {tuple(x.shape)}")
        h = self.conv(x).mean(dim=(2, 3))
        return self.head(h)


class FilmBlock(nn.Module):
    """conv -> instance norm -> style-conditioned per-channel affine -> relu."""

    def __init__(self, in_ch, out_ch, style_dim, upsample=False):
        super().__init__()
        self.upsample = upsample
        self.conv = nn.Conv2d(in_ch, out_ch, 3, 1, 1)
        self.norm = nn.InstanceNorm2d(out_ch, affine=False)
        self.film = nn.Linear(style_dim, 2 * out_ch)

    def forward(self, h, s):
        if self.upsample:
            h = nn.functional.interpolate(h, scale_factor=2, mode="nearest")
        h = self.norm(self.conv(h))
        gamma, beta = self.film(s).chunk(2, dim=1)
        h = h * (1.0 + gamma[:, :, None, None]) + beta[:, :, None, None]
        return torch.relu(h)


class Mixer(nn.Module):
    """(content map, style vector) -> glyph image in [0, 1]."""

    def __init__(self, cfg: FontModelConfig):
        super().__init__()
        c, d = cfg.base_channels, cfg.style_dim
        self.blocks = nn.ModuleList([
            FilmBlock(4 * c, 4 * c, d),                  # 10x10
            FilmBlock(4 * c, 2 * c, d, upsample=True),   # 20x20
            FilmBlock(2 * c, c, d, upsample=True),       # 40x40
            FilmBlock(c, c // 2, d, upsample=True),      # 80x80
        ])
        self.out = nn.Conv2d(c // 2, 1, 3, 1, 1)

    def forward(self, content, style):
        h = content
        for block in self.blocks:
            h = block(h, style)
        return torch.sigmoid(self.out(h))


class FontModel(nn.Module):
    def __init__(self, cfg: FontModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or FontModelConfig()
        self.content_encoder = ContentEncoder(self.cfg)
        self.style_encoder = StyleEncoder(self.cfg)
        self.mixer = Mixer(self.cfg)

    def encode_content(self, images) -> torch.Tensor:
        return self.content_encoder(to_batch(images))

    def encode_style(self, images) -> torch.Tensor:
        return self.style_encoder(to_batch(images))

    def mix(self, content, style) -> torch.Tensor:
        return self.mixer(content, style)

    def forward(self, content_images, style_images):
        return self.mix(self.encode_content(content_images), self.encode_style(style_images))

    def freeze(self):
        self.requires_grad_(False)
        self.eval()
        return self

    def checksum(self) -> str:
        return state_dict_checksum(self.state_dict())


# ---------------------------------------------------------------------------
# mean styles and the blending basis


def mean_style(model: FontModel, font_glyphs: np.ndarray, vocab: Vocabulary | None = None,
               batch: int = 64) -> np.ndarray:
    """Average the style vectors of one font across all vocabulary characters."""
    if vocab is not None and len(font_glyphs) != len(vocab):
        raise ValueError(
            f"font has {len(font_glyphs)} glyphs, vocabulary needs {len(vocab)}"
        )
    feats = []
    with torch.no_grad():
        for i in range(0, len(font_glyphs), batch):
            feats.append(model.encode_style(font_glyphs[i : i + batch]).double())
    return torch.cat(feats).mean(dim=0).cpu().numpy()


@dataclass
class StyleBasis:
    """Columns are per-font mean styles; the target font is the last column."""

    matrix: np.ndarray  # (d, n+1) float32
    font_ids: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2:
            raise ValueError("style basis must be a (d, n+1) matrix")
        if self.font_ids and len(self.font_ids) != self.matrix.shape[1]:
            raise ValueError("font_ids length must match basis column count")

    @property
    def n_columns(self) -> int:
        return self.matrix.shape[1]

    @property
    def target_index(self) -> int:
        return self.matrix.shape[1] - 1

    @property
    def target_style(self) -> np.ndarray:
        return self.matrix[:, -1]

    def to_tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.matrix)

    def with_target(self, style: np.ndarray, font_id: str) -> "StyleBasis":
        m = self.matrix.copy()
        m[:, -1] = style
        ids = self.font_ids[:-1] + (font_id,) if self.font_ids else ()
        return StyleBasis(m, ids)


def compute_style_basis(model: FontModel, glyph_set: dict[str, np.ndarray],
                        basis_fonts, target_font: str) -> StyleBasis:
    """Mean styles of the basis fonts plus the target font (last column)."""
    order = [f for f in basis_fonts if f != target_font] + [target_font]
    cols = [mean_style(model, glyph_set[f]) for f in order]
    return StyleBasis(np.stack(cols, axis=1).astype(np.float32), tuple(order))


def save_mean_styles(path, styles: dict[str, np.ndarray]):
    np.savez(path, **{k: np.asarray(v, np.float32) for k, v in styles.items()})


def load_mean_styles(path) -> dict[str, np.ndarray]:
    with np.load(path) as z:
        return {k: z[k] for k in z.files}


# ---------------------------------------------------------------------------
# training


@dataclass
class FontModelTrainConfig:
    steps: int = 1500
    batch: int = 16
    lr: float = 3e-4
    seed: int = 0
    holdout_fraction: float = 0.08  # of (font, char) cells, excluded from all roles
    # content glyphs come from a uniformly random font; biasing toward the
    # target font lets the mixer copy content pixels and ignore the style
    # input entirely, which kills the style manifold the watermark needs
    same_font_content_p: float = 0.0
    # anti-collapse terms: closely related font variants (bold/oblique cuts of
    # one family) are too similar for the style channel to self-organize from
    # pixel L1 alone, so fonts are pulled apart in style space and the mixer
    # is forced to imprint a recoverable style
    style_contrast_weight: float = 0.25
    style_cycle_weight: float = 0.25
    style_tau: float = 0.1
    log_every: int = 25


class TrainingDiverged(RuntimeError):
    pass


def _holdout_mask(n_fonts, n_chars, fraction, rng) -> np.ndarray:
    mask = np.zeros((n_fonts, n_chars), dtype=bool)
    n_hold = int(round(fraction * n_fonts * n_chars))
    flat = rng.choice(n_fonts * n_chars, size=n_hold, replace=False)
    mask.ravel()[flat] = True
    # keep at least 2 training chars per font so style inputs exist
    for f in range(n_fonts):
        if (~mask[f]).sum() < 2:
            mask[f, :] = False
    return mask


def train_font_model(
    glyph_set: dict[str, np.ndarray],
    config: FontModelTrainConfig | None = None,
    model_cfg: FontModelConfig | None = None,
):
    """Train the synthesis model on (content char, style char) -> target glyph.

    Returns (model, log) where log has per-interval losses and the final
    held-out same-font reconstruction L1.
    """
    cfg = config or FontModelTrainConfig()
    if len(glyph_set) < 2:
        raise ValueError("font model training needs at least 2 fonts")
    torch.manual_seed(cfg.seed)
    rng = seeded_rng(cfg.seed)

    font_ids = sorted(glyph_set)
    stack = torch.from_numpy(np.stack([glyph_set[f] for f in font_ids])).float()
    n_fonts, n_chars = stack.shape[0], stack.shape[1]
    held = _holdout_mask(n_fonts, n_chars, cfg.holdout_fraction, rng)
    train_chars = [np.flatnonzero(~held[f]) for f in range(n_fonts)]

    model = FontModel(model_cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    losses = []

    def sample_batch():
        # fonts drawn in pairs so the style-contrastive term always has positives
        half = rng.integers(0, n_fonts, size=cfg.batch // 2)
        fi = np.repeat(half, 2)[: cfg.batch]
        tv = np.array([rng.choice(train_chars[f]) for f in fi])
        su = np.array([rng.choice(train_chars[f][train_chars[f] != v])
                       for f, v in zip(fi, tv)])
        cj = np.where(
            rng.random(cfg.batch) < cfg.same_font_content_p,
            fi,
            rng.integers(0, n_fonts, size=cfg.batch),
        )
        # content glyphs must themselves be training cells
        cj = np.array([j if not held[j, v] else f for j, f, v in zip(cj, fi, tv)])
        content = stack[cj, tv][:, None]
        style = stack[fi, su][:, None]
        target = stack[fi, tv][:, None]
        return content, style, target, torch.from_numpy(fi.astype(np.int64))

    def style_contrast(styles, labels):
        z = nn.functional.normalize(styles, dim=1)
        sims = z @ z.T / cfg.style_tau
        eye = torch.eye(len(z), dtype=torch.bool)
        same = (labels[:, None] == labels[None, :]) & ~eye
        terms = []
        for b in range(len(z)):
            if not same[b].any():
                continue
            denom = torch.logsumexp(sims[b][~eye[b]], dim=0)
            terms.append((denom - sims[b][same[b]]).mean())
        return torch.stack(terms).mean() if terms else styles.sum() * 0.0

    model.train()
    for step in range(cfg.steps):
        content, style, target, labels = sample_batch()
        s = model.encode_style(style)
        out = model.mix(model.encode_content(content), s)
        l1 = (out - target).abs().mean()
        l_con = style_contrast(s, labels)
        s_back = model.encode_style(out)
        l_cyc = (1.0 - nn.functional.cosine_similarity(s_back, s.detach(), dim=1)).mean()
        loss = l1 + cfg.style_contrast_weight * l_con + cfg.style_cycle_weight * l_cyc
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            losses.append({"step": step, "l1": l1.item(),
                           "style_contrast": l_con.item(), "style_cycle": l_cyc.item()})

    model.eval()
    holdout_l1 = evaluate_holdout(model, stack, held, seed=cfg.seed)
    log = {"losses": losses, "holdout_l1": holdout_l1,
           "transfer_l1": evaluate_transfer(model, stack, seed=cfg.seed),
           "held_cells": int(held.sum()), "font_ids": font_ids}
    return model, log


def evaluate_holdout(model: FontModel, stack: torch.Tensor, held: np.ndarray,
                     seed: int = 0, batch: int = 64) -> float:
    """Mean same-font reconstruction L1 over held-out (font, char) cells."""
    rng = seeded_rng(seed + 1)
    cells = np.argwhere(held)
    if len(cells) == 0:
        return float("nan")
    errs = []
    with torch.no_grad():
        for i in range(0, len(cells), batch):
            chunk = cells[i : i + batch]
            content, style, target = [], [], []
            for f, v in chunk:
                train_v = np.flatnonzero(~held[f])
                u = rng.choice(train_v[train_v != v]) if len(train_v) > 1 else v
                content.append(stack[f, v])
                style.append(stack[f, u])
                target.append(stack[f, v])
            out = model(torch.stack(content)[:, None], torch.stack(style)[:, None])
            errs.append((out - torch.stack(target)[:, None]).abs().mean(dim=(1, 2, 3)))
    return float(torch.cat(errs).mean())


def evaluate_transfer(model: FontModel, stack: torch.Tensor, seed: int = 0,
                      n: int = 64) -> float:
    """Cross-font transfer L1: content from font j, style from font i != j.

    A low value certifies the style input actually steers synthesis; a model
    that copies the content glyph scores badly here.
    """
    rng = seeded_rng(seed + 2)
    n_fonts, n_chars = stack.shape[0], stack.shape[1]
    fi = rng.integers(0, n_fonts, size=n)
    fj = (fi + rng.integers(1, n_fonts, size=n)) % n_fonts
    tv = rng.integers(0, n_chars, size=n)
    su = (tv + rng.integers(1, n_chars, size=n)) % n_chars
    with torch.no_grad():
        out = model(stack[fj, tv][:, None], stack[fi, su][:, None])
        return float((out - stack[fi, tv][:, None]).abs().mean())


def save_font_model(path, model: FontModel, extra: dict | None = None):
    save_checkpoint(path, "font_model", {
        "config": model.cfg.to_dict(),
        "state_dict": model.state_dict(),
        **(extra or {}),
    })


def load_font_model(path) -> FontModel:
    blob = load_checkpoint(path, "font_model")
    model = FontModel(FontModelConfig(**blob["config"]))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model
