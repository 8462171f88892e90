"""Watermark encoder: message-conditioned blend weights over a mean-style basis,
glyph synthesis through the frozen font model, and the differentiable
binarization filter that strips interpolation artifacts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from fontmark.config import load_checkpoint, save_checkpoint, state_dict_checksum, array_checksum
from fontmark.font_model import FontModel, StyleBasis, to_batch


@dataclass
class DbfConfig:
    sharpness: float = 50.0  # k
    threshold: float = 0.5  # sigma

    def __post_init__(self):
        if self.sharpness <= 0:
            raise ValueError(f"DBF sharpness must be positive, got {self.sharpness}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"DBF threshold must be in (0, 1), got {self.threshold}")


def dbf(image, cfg: DbfConfig | None = None):
    """Scaled sigmoid 1 / (1 + exp(-k (I - sigma))): a soft, differentiable
    binarization. Accepts torch tensors or numpy arrays, returns the same kind."""
    cfg = cfg or DbfConfig()
    if isinstance(image, np.ndarray):
        return _dbf_np(image, cfg)
    return torch.sigmoid(cfg.sharpness * (image - cfg.threshold))


def _dbf_np(image: np.ndarray, cfg: DbfConfig) -> np.ndarray:
    from scipy.special import expit

    return expit(cfg.sharpness * (image - cfg.threshold)).astype(image.dtype, copy=False)


def blend_style(basis, weights):
    """Convex combination of basis columns: s' = S w.

    ``basis`` is (d, n+1) or per-sample (B, d, n+1); ``weights`` is (n+1,)
    or (B, n+1). Returns (d,) or (B, d) matching the inputs.
    """
    basis_t = basis.to_tensor() if isinstance(basis, StyleBasis) else torch.as_tensor(basis)
    w = torch.as_tensor(weights)
    single = w.ndim == 1
    if single:
        w = w[None]
    if basis_t.ndim == 2:
        if basis_t.shape[1] != w.shape[1]:
            raise ValueError(
                f"basis has {basis_t.shape[1]} columns, weights have {w.shape[1]}"
            )
        out = w.to(basis_t.dtype) @ basis_t.T
    elif basis_t.ndim == 3:
        if basis_t.shape[0] != w.shape[0] or basis_t.shape[2] != w.shape[1]:
            raise ValueError(
                f"per-sample basis {tuple(basis_t.shape)} incompatible with weights {tuple(w.shape)}"
            )
        out = torch.einsum("bdn,bn->bd", basis_t, w.to(basis_t.dtype))
    else:
        raise ValueError("basis must be (d, n+1) or (B, d, n+1)")
    return out[0] if single else out


class WeightNet(nn.Module):
    """f_w: (target mean style, content feature, message) -> simplex blend weights.

    The three inputs are projected to the style dimension, L2-normalized,
    summed, and passed through an MLP head; a low-temperature softmax keeps
    the output on the simplex.
    """

    def __init__(self, style_dim: int, content_channels: int, n_columns: int,
                 bpc: int, tau_w: float = 0.1, hidden: int = 128):
        super().__init__()
        if tau_w <= 0:
            raise ValueError("tau_w must be positive")
        self.style_dim = style_dim
        self.n_columns = n_columns
        self.bpc = bpc
        self.tau_w = tau_w
        self.message_embedding = nn.Embedding(2**bpc, style_dim)
        self.proj_style = nn.Linear(style_dim, style_dim)
        self.proj_content = nn.Linear(content_channels, style_dim)
        self.proj_message = nn.Linear(style_dim, style_dim)
        self.head = nn.Sequential(
            nn.Linear(style_dim, hidden), nn.ReLU(), nn.Linear(hidden, n_columns)
        )

    def logits(self, target_style, content_feats, message_values):
        pooled = content_feats.mean(dim=(2, 3))
        if target_style.ndim == 1:
            target_style = target_style[None].expand(len(pooled), -1)
        m = torch.as_tensor(message_values, dtype=torch.long)
        h = (
            F.normalize(self.proj_style(target_style), dim=1)
            + F.normalize(self.proj_content(pooled), dim=1)
            + F.normalize(self.proj_message(self.message_embedding(m)), dim=1)
        )
        return self.head(h)

    def forward(self, target_style, content_feats, message_values):
        return torch.softmax(self.logits(target_style, content_feats, message_values)
                             / self.tau_w, dim=1)


def blend_weights(target_style, content_feats, message_values, weight_net: WeightNet):
    """Spec-facing wrapper: w = softmax(f_w(s_t, c, m) / tau_w)."""
    return weight_net(target_style, content_feats, message_values)


class WatermarkEncoder(nn.Module):
    """Bundles the frozen font model, the style basis, the weight net and the
    binarization filter into the full glyph watermarking transform."""

    def __init__(self, font_model: FontModel, basis: StyleBasis,
                 weight_net: WeightNet, dbf_cfg: DbfConfig | None = None):
        super().__init__()
        self.font_model = font_model.freeze()
        self.basis = basis
        self.register_buffer("basis_tensor", basis.to_tensor())
        self.weight_net = weight_net
        self.dbf_cfg = dbf_cfg or DbfConfig()

    @property
    def bpc(self) -> int:
        return self.weight_net.bpc

    def content_features(self, cover_images) -> torch.Tensor:
        with torch.no_grad():
            return self.font_model.encode_content(to_batch(cover_images))

    def weights_for(self, content_feats, message_values, target_style=None):
        s_t = self.basis_tensor[:, -1] if target_style is None else target_style
        return self.weight_net(s_t, content_feats, message_values)

    def forward(self, content_feats, message_values, target_style=None,
                basis=None, return_parts=False):
        """Perturbed glyphs (before DBF). Gradients flow only into the weight net."""
        w = self.weights_for(content_feats, message_values, target_style)
        basis_t = self.basis_tensor if basis is None else basis
        s_prime = blend_style(basis_t, w)
        images = self.font_model.mix(content_feats, s_prime)
        if return_parts:
            return images, w, s_prime
        return images

    def encode_clean(self, cover_images, message_values, target_style=None, basis=None):
        """Cover glyphs -> DBF-filtered watermarked glyphs (inference path)."""
        feats = self.content_features(cover_images)
        with torch.no_grad():
            out = self.forward(feats, message_values, target_style, basis)
            return dbf(out, self.dbf_cfg)


def encode(cover_images, message_values, font_model: FontModel, basis: StyleBasis,
           weight_net: WeightNet, apply_dbf: bool = False):
    """One-shot form: synthesize watermarked glyphs for cover images + messages."""
    enc = WatermarkEncoder(font_model, basis, weight_net)
    feats = enc.content_features(cover_images)
    out = enc(feats, message_values)
    return dbf(out, enc.dbf_cfg) if apply_dbf else out


# ---------------------------------------------------------------------------
# checkpointing (records hashes of the frozen pieces it was trained against)


def save_encoder(path, encoder: WatermarkEncoder, extra: dict | None = None):
    wn = encoder.weight_net
    save_checkpoint(path, "wm_encoder", {
        "weight_net": {
            "style_dim": wn.style_dim,
            "content_channels": wn.proj_content.in_features,
            "n_columns": wn.n_columns,
            "bpc": wn.bpc,
            "tau_w": wn.tau_w,
            "hidden": wn.head[0].out_features,
            "state_dict": wn.state_dict(),
        },
        "dbf": {"sharpness": encoder.dbf_cfg.sharpness, "threshold": encoder.dbf_cfg.threshold},
        "basis_matrix": encoder.basis.matrix,
        "basis_font_ids": list(encoder.basis.font_ids),
        "font_model_checksum": encoder.font_model.checksum(),
        "basis_checksum": array_checksum(encoder.basis.matrix),
        **(extra or {}),
    })


def load_encoder(path, font_model: FontModel, verify: bool = True) -> WatermarkEncoder:
    blob = load_checkpoint(path, "wm_encoder")
    if verify:
        have = font_model.checksum()
        want = blob["font_model_checksum"]
        if have != want:
            raise ValueError(
                f"{path}: encoder was trained against font model {want[:12]}..., "
                f"got {have[:12]}..."
            )
        if array_checksum(np.asarray(blob["basis_matrix"])) != blob["basis_checksum"]:
            raise ValueError(f"{path}: style basis blob does not match its checksum")
    wn_cfg = blob["weight_net"]
    wn = WeightNet(
        style_dim=wn_cfg["style_dim"], content_channels=wn_cfg["content_channels"],
        n_columns=wn_cfg["n_columns"], bpc=wn_cfg["bpc"],
        tau_w=wn_cfg["tau_w"], hidden=wn_cfg["hidden"],
    )
    wn.load_state_dict(wn_cfg["state_dict"])
    basis = StyleBasis(np.asarray(blob["basis_matrix"]), tuple(blob["basis_font_ids"]))
    return WatermarkEncoder(font_model, basis, wn, DbfConfig(**blob["dbf"]))
