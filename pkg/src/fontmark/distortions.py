"""Differentiable transmission-distortion chain between encoder and decoder.

Six distortion kinds (blur, crop, resize, noise, perspective, color) are
differentiable w.r.t. the input image so decoder gradients reach the encoder
through them; JPEG is provided separately for evaluation only. Background
augmentation (BGA) composites a natural image behind the glyph strokes using
binarization masks and, when enabled, always runs before the sampled stages.

Ranges follow the StegaStamp-style defaults; all of them live in
``DistortionRanges`` and can be loaded from a key=value config file.
Spatial parameters are stored as fractions of the image side so the same
spec applies to 80 px glyphs and toy test images alike.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from fontmark.config import parse_kv_file, write_kv_file

KINDS = ("blur", "crop", "resize", "noise", "perspective", "color")


@dataclass
class DistortionSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")


@dataclass
class AugmentationChain:
    stages: list  # exactly 3 DistortionSpec
    bga: bool = False

    def __post_init__(self):
        if len(self.stages) != 3:
            raise ValueError(f"augmentation chains have exactly 3 stages, got {len(self.stages)}")


@dataclass
class DistortionRanges:
    blur_sigma: tuple = (0.1, 1.5)
    crop_keep: tuple = (0.7, 1.0)
    resize_scale: tuple = (0.5, 1.5)
    noise_amp: tuple = (0.0, 0.08)
    perspective_shift: tuple = (0.0, 0.1)  # corner displacement / image side (8 px at 80)
    color_contrast: tuple = (0.8, 1.2)
    color_brightness: tuple = (-0.2, 0.2)
    pool: tuple = KINDS
    bga: bool = True
    seed: int = 0

    def to_kv(self) -> dict:
        return {
            "blur_sigma": f"{self.blur_sigma[0]},{self.blur_sigma[1]}",
            "crop_keep": f"{self.crop_keep[0]},{self.crop_keep[1]}",
            "resize_scale": f"{self.resize_scale[0]},{self.resize_scale[1]}",
            "noise_amp": f"{self.noise_amp[0]},{self.noise_amp[1]}",
            "perspective_shift": f"{self.perspective_shift[0]},{self.perspective_shift[1]}",
            "color_contrast": f"{self.color_contrast[0]},{self.color_contrast[1]}",
            "color_brightness": f"{self.color_brightness[0]},{self.color_brightness[1]}",
            "pool": ",".join(self.pool),
            "bga": str(self.bga).lower(),
            "seed": str(self.seed),
        }

    @classmethod
    def from_kv(cls, kv: dict) -> "DistortionRanges":
        def pair(key, default):
            if key not in kv:
                return default
            a, b = kv[key].split(",")
            return (float(a), float(b))

        d = cls()
        return cls(
            blur_sigma=pair("blur_sigma", d.blur_sigma),
            crop_keep=pair("crop_keep", d.crop_keep),
            resize_scale=pair("resize_scale", d.resize_scale),
            noise_amp=pair("noise_amp", d.noise_amp),
            perspective_shift=pair("perspective_shift", d.perspective_shift),
            color_contrast=pair("color_contrast", d.color_contrast),
            color_brightness=pair("color_brightness", d.color_brightness),
            pool=tuple(kv["pool"].split(",")) if "pool" in kv else d.pool,
            bga=kv.get("bga", str(d.bga)).lower() in ("1", "true", "yes"),
            seed=int(kv.get("seed", d.seed)),
        )

    def save(self, path):
        write_kv_file(path, self.to_kv())

    @classmethod
    def load(cls, path) -> "DistortionRanges":
        return cls.from_kv(parse_kv_file(path))


# ---------------------------------------------------------------------------
# application


def _as4d(image):
    t = image if isinstance(image, torch.Tensor) else torch.from_numpy(np.asarray(image)).float()
    squeeze = t.ndim
    if t.ndim == 2:
        t = t[None, None]
    elif t.ndim == 3:
        t = t[:, None]
    elif t.ndim != 4:
        raise ValueError(f"expected 2-4 dims, got {t.ndim}")
    return t, squeeze


def _restore(t, ndim):
    if ndim == 2:
        return t[0, 0]
    if ndim == 3:
        return t[:, 0]
    return t


def _gaussian_kernel1d(sigma: float, dtype, max_radius: int):
    radius = min(max(int(math.ceil(3.0 * sigma)), 1), max_radius)
    x = torch.arange(-radius, radius + 1, dtype=dtype)
    k = torch.exp(-0.5 * (x / max(sigma, 1e-12)) ** 2)
    return k / k.sum()


def _apply_blur(t, sigma: float):
    if sigma <= 0:
        return t
    k = _gaussian_kernel1d(sigma, t.dtype, max_radius=(min(t.shape[-2:]) - 1) // 2)
    r = (len(k) - 1) // 2
    pad = (r, r, r, r)
    out = F.pad(t, pad, mode="reflect")
    out = F.conv2d(out, k.view(1, 1, 1, -1))
    out = F.conv2d(out, k.view(1, 1, -1, 1))
    return out


def _apply_crop(t, keep: float, cx: float, cy: float, fill: float = 1.0):
    h, w = t.shape[-2:]
    kh, kw = max(int(round(h * math.sqrt(keep))), 1), max(int(round(w * math.sqrt(keep))), 1)
    top, left = int(round(cy * (h - kh))), int(round(cx * (w - kw)))
    mask = torch.zeros(1, 1, h, w, dtype=t.dtype)
    mask[..., top : top + kh, left : left + kw] = 1.0
    return t * mask + fill * (1.0 - mask)


def _apply_resize(t, scale: float):
    h, w = t.shape[-2:]
    inner = (max(int(round(h * scale)), 1), max(int(round(w * scale)), 1))
    if inner == (h, w):
        return t
    down = F.interpolate(t, size=inner, mode="bilinear", align_corners=False)
    return F.interpolate(down, size=(h, w), mode="bilinear", align_corners=False)


def _apply_noise(t, amp: float, seed: int):
    if amp == 0.0:
        return t
    g = torch.Generator().manual_seed(seed)
    noise = torch.randn(t.shape, generator=g, dtype=t.dtype)
    return t + amp * noise


def _perspective_grid(corners_src, h, w, dtype):
    """Sampling grid mapping the output square onto the displaced source quad."""
    # unit square corners (x, y): tl, tr, br, bl
    dst = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    src = np.asarray(corners_src, dtype=np.float64)
    A = []
    b = []
    for (xd, yd), (xs, ys) in zip(dst, src):
        A.append([xd, yd, 1, 0, 0, 0, -xs * xd, -xs * yd])
        b.append(xs)
        A.append([0, 0, 0, xd, yd, 1, -ys * xd, -ys * yd])
        b.append(ys)
    coeff = np.linalg.solve(np.asarray(A), np.asarray(b))
    a, bb, c, d, e, f, g, hh = coeff
    ys, xs = np.meshgrid(
        (np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij"
    )
    denom = g * xs + hh * ys + 1.0
    sx = (a * xs + bb * ys + c) / denom
    sy = (d * xs + e * ys + f) / denom
    grid = np.stack([sx * 2.0 - 1.0, sy * 2.0 - 1.0], axis=-1)
    return torch.from_numpy(grid).to(dtype)[None]


def _apply_perspective(t, shifts):
    h, w = t.shape[-2:]
    base = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    src = base + np.asarray(shifts, dtype=np.float64).reshape(4, 2)
    grid = _perspective_grid(src, h, w, t.dtype).expand(t.shape[0], -1, -1, -1)
    # sample (1 - I) with zero padding so off-image areas read as white
    warped = F.grid_sample(1.0 - t, grid, mode="bilinear",
                           padding_mode="zeros", align_corners=False)
    return 1.0 - warped


def _apply_color(t, contrast: float, brightness: float):
    return (t - 0.5) * contrast + 0.5 + brightness


def apply_distortion(image, spec: DistortionSpec):
    """Apply one distortion; output clamped to [0, 1], differentiable w.r.t. input."""
    t, ndim = _as4d(image)
    p = spec.params
    if spec.kind == "blur":
        _require(p["sigma"] >= 0, f"blur sigma must be >= 0, got {p['sigma']}")
        out = _apply_blur(t, p["sigma"])
    elif spec.kind == "crop":
        _require(0 < p["keep"] <= 1, f"crop keep fraction must be in (0, 1], got {p['keep']}")
        _require(0 <= p.get("cx", 0.5) <= 1 and 0 <= p.get("cy", 0.5) <= 1,
                 "crop center must be in [0, 1]")
        out = _apply_crop(t, p["keep"], p.get("cx", 0.5), p.get("cy", 0.5))
    elif spec.kind == "resize":
        _require(p["scale"] > 0, f"resize scale must be positive, got {p['scale']}")
        out = _apply_resize(t, p["scale"])
    elif spec.kind == "noise":
        _require(p["amp"] >= 0, f"noise amplitude must be >= 0, got {p['amp']}")
        out = _apply_noise(t, p["amp"], spec.seed)
    elif spec.kind == "perspective":
        shifts = np.asarray(p["shifts"], dtype=np.float64)
        _require(shifts.shape == (8,) and np.all(np.abs(shifts) <= 0.5),
                 "perspective shifts must be 8 fractions with |shift| <= 0.5")
        out = _apply_perspective(t, shifts)
    elif spec.kind == "color":
        _require(p["contrast"] > 0, "contrast factor must be positive")
        out = _apply_color(t, p["contrast"], p.get("brightness", 0.0))
    else:  # pragma: no cover - guarded by DistortionSpec
        raise ValueError(spec.kind)
    return _restore(out.clamp(0.0, 1.0), ndim)


def _require(cond, msg):
    if not cond:
        raise ValueError(msg)


def identity_spec(kind: str) -> DistortionSpec:
    """Parameters under which each kind reduces to (numerically) the identity."""
    params = {
        "blur": {"sigma": 1e-6},
        "crop": {"keep": 1.0, "cx": 0.5, "cy": 0.5},
        "resize": {"scale": 1.0},
        "noise": {"amp": 0.0},
        "perspective": {"shifts": [0.0] * 8},
        "color": {"contrast": 1.0, "brightness": 0.0},
    }[kind]
    return DistortionSpec(kind, params)


def sample_spec(kind: str, ranges: DistortionRanges, rng: np.random.Generator,
                severity: float | None = None) -> DistortionSpec:
    """Draw concrete parameters for one kind; ``severity`` in [0, 1] pins the
    position inside the range instead of sampling it."""

    def draw(lo, hi, hardest_low=False):
        if severity is None:
            return float(rng.uniform(lo, hi))
        s = severity if not hardest_low else 1.0 - severity
        return float(lo + (hi - lo) * s)

    seed = int(rng.integers(0, 2**31 - 1))
    if kind == "blur":
        return DistortionSpec(kind, {"sigma": draw(*ranges.blur_sigma)}, seed)
    if kind == "crop":
        return DistortionSpec(kind, {
            "keep": draw(*ranges.crop_keep, hardest_low=True),
            "cx": float(rng.uniform(0, 1)), "cy": float(rng.uniform(0, 1)),
        }, seed)
    if kind == "resize":
        # hardest end is the strongest downscale
        if severity is None:
            scale = float(rng.uniform(*ranges.resize_scale))
        else:
            scale = float(ranges.resize_scale[1] - severity
                          * (ranges.resize_scale[1] - ranges.resize_scale[0]))
        return DistortionSpec(kind, {"scale": scale}, seed)
    if kind == "noise":
        return DistortionSpec(kind, {"amp": draw(*ranges.noise_amp)}, seed)
    if kind == "perspective":
        lo, hi = ranges.perspective_shift
        mag = draw(lo, hi)
        shifts = rng.uniform(-1.0, 1.0, size=8) * mag
        return DistortionSpec(kind, {"shifts": shifts.tolist()}, seed)
    if kind == "color":
        if severity is None:
            contrast = float(rng.uniform(*ranges.color_contrast))
            brightness = float(rng.uniform(*ranges.color_brightness))
        else:
            # symmetric ranges: severity scales the deviation from neutral
            cc = ranges.color_contrast
            bb = ranges.color_brightness
            sign = 1.0 if rng.random() < 0.5 else -1.0
            contrast = 1.0 + sign * severity * max(cc[1] - 1.0, 1.0 - cc[0])
            brightness = sign * severity * bb[1]
        return DistortionSpec(kind, {"contrast": contrast, "brightness": brightness}, seed)
    raise ValueError(f"unknown distortion kind {kind!r}")


def sample_chain(rng: np.random.Generator, ranges: DistortionRanges | None = None,
                 pool=None, bga: bool | None = None) -> AugmentationChain:
    """Three distinct kinds sampled without replacement, parameters drawn
    from the configured ranges."""
    ranges = ranges or DistortionRanges()
    pool = tuple(pool if pool is not None else ranges.pool)
    if len(pool) < 3:
        raise ValueError(f"distortion pool needs >= 3 kinds, got {pool}")
    kinds = [pool[i] for i in rng.choice(len(pool), size=3, replace=False)]
    stages = [sample_spec(k, ranges, rng) for k in kinds]
    return AugmentationChain(stages=stages, bga=ranges.bga if bga is None else bga)


def apply_bga(image, background, threshold: float = 0.5):
    """Composite: font pixels from the glyph, the rest from the background.

    Masks come from hard binarization of the glyph itself (strokes below the
    threshold), so a blank glyph returns the background unchanged.
    """
    t, ndim = _as4d(image)
    b, _ = _as4d(background)
    if b.shape[-2:] != t.shape[-2:]:
        raise ValueError(f"background {tuple(b.shape[-2:])} does not match image {tuple(t.shape[-2:])}")
    if b.shape[0] == 1 and t.shape[0] > 1:
        b = b.expand(t.shape[0], -1, -1, -1)
    elif b.shape[0] != t.shape[0]:
        raise ValueError("background batch size must be 1 or match the image batch")
    b = b.to(t.dtype)
    font_mask = (t < threshold).to(t.dtype)
    out = t * font_mask + b * (1.0 - font_mask)
    return _restore(out, ndim)


def apply_chain(image, chain: AugmentationChain, background=None, threshold: float = 0.5):
    """BGA (when enabled) followed by the three sampled stages, in order."""
    t, ndim = _as4d(image)
    if chain.bga:
        if background is None:
            raise ValueError("chain has background augmentation enabled but no background given")
        t = apply_bga(t, background, threshold)
        t, _ = _as4d(t)
    for spec in chain.stages:
        t, _ = _as4d(apply_distortion(t, spec))
    return _restore(t, ndim)


# ---------------------------------------------------------------------------
# evaluation-only JPEG round trip (not differentiable)


def jpeg_compress(image: np.ndarray, quality: int) -> np.ndarray:
    from PIL import Image

    if not 1 <= quality <= 100:
        raise ValueError("JPEG quality must be in [1, 100]")
    arr = (np.clip(np.asarray(image), 0, 1) * 255).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="JPEG", quality=quality)
    buf.seek(0)
    return np.asarray(Image.open(buf), np.float32) / 255.0


# ---------------------------------------------------------------------------
# backgrounds


class BackgroundPool:
    """Pool of [0, 1] grayscale backgrounds; procedural by default, or loaded
    from a directory of images. A slice of the pool is plain white so plain
    documents stay in-distribution when BGA is always on."""

    def __init__(self, images: list[np.ndarray]):
        if not images:
            raise ValueError("background pool is empty")
        self.images = [np.asarray(im, np.float32) for im in images]

    @classmethod
    def procedural(cls, n: int = 64, size: int = 256, seed: int = 0,
                   plain_fraction: float = 0.25) -> "BackgroundPool":
        from scipy.ndimage import gaussian_filter

        rng = np.random.default_rng(seed)
        images = []
        n_plain = int(round(n * plain_fraction))
        for _ in range(n_plain):
            images.append(np.full((size, size), float(rng.uniform(0.9, 1.0)), np.float32))
        for _ in range(n - n_plain):
            kind = rng.integers(0, 3)
            if kind == 0:  # low-frequency cloud texture
                field_ = gaussian_filter(rng.normal(size=(size, size)), sigma=rng.uniform(8, 24))
                lo, hi = field_.min(), field_.max()
                img = (field_ - lo) / max(hi - lo, 1e-9)
                img = 0.35 + 0.65 * img
            elif kind == 1:  # linear gradient
                theta = rng.uniform(0, 2 * np.pi)
                ys, xs = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
                ramp = np.cos(theta) * xs + np.sin(theta) * ys
                ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
                img = 0.45 + 0.5 * ramp
            else:  # soft random blobs
                img = np.full((size, size), rng.uniform(0.75, 0.95))
                ys, xs = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
                for _ in range(int(rng.integers(3, 9))):
                    cy, cx = rng.uniform(0, size, 2)
                    r = rng.uniform(size / 12, size / 3)
                    blob = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * r * r))
                    img = img - rng.uniform(0.1, 0.45) * blob
                img = np.clip(img, 0.0, 1.0)
            images.append(img.astype(np.float32))
        return cls(images)

    @classmethod
    def from_directory(cls, path) -> "BackgroundPool":
        from pathlib import Path

        from PIL import Image

        files = sorted(
            p for p in Path(path).iterdir()
            if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")
        )
        images = [np.asarray(Image.open(f).convert("L"), np.float32) / 255.0 for f in files]
        return cls(images)

    def sample(self, rng: np.random.Generator, shape: tuple[int, int],
               n: int = 1) -> torch.Tensor:
        """Random crops resized to ``shape``; returns (n, 1, H, W) float32."""
        h, w = shape
        out = []
        for _ in range(n):
            img = self.images[int(rng.integers(0, len(self.images)))]
            ih, iw = img.shape
            ch = int(rng.integers(h, ih + 1)) if ih > h else ih
            cw = int(rng.integers(w, iw + 1)) if iw > w else iw
            top = int(rng.integers(0, ih - ch + 1))
            left = int(rng.integers(0, iw - cw + 1))
            crop = torch.from_numpy(img[top : top + ch, left : left + cw])[None, None]
            if crop.shape[-2:] != (h, w):
                crop = F.interpolate(crop, size=(h, w), mode="bilinear", align_corners=False)
            out.append(crop)
        return torch.cat(out).clamp(0.0, 1.0)
