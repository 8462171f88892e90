"""Training objectives.

All losses reduce by summation over the batch (not the mean), matching the
way their weighting coefficients are specified. Batch-matrix forms are used
for speed; the tests pin each one against a brute-force double-loop oracle.
"""

from __future__ import annotations

import torch
import torch.nn as nn


def loss_sd(weights: torch.Tensor, message_values, tau_sd: float = 0.5) -> torch.Tensor:
    """Style disparity: supervised-contrastive pull on blend weights.

    Affinity between two weight vectors is exp(-||w_b - w_p||_2 / tau_sd);
    for each anchor b, positives are other batch members carrying the same
    message. Anchors with no positive are skipped; a batch with no positive
    pair at all is an error.
    """
    w = weights
    if w.ndim != 2:
        raise ValueError("weights must be (B, n_columns)")
    m = torch.as_tensor(message_values)
    b_size = len(w)
    d = torch.cdist(w, w, p=2)
    neg_aff = -d / tau_sd  # log affinity
    same = (m[:, None] == m[None, :])
    eye = torch.eye(b_size, dtype=torch.bool)
    pos = same & ~eye
    terms = []
    for b in range(b_size):
        if not pos[b].any():
            continue
        denom = torch.logsumexp(neg_aff[b][~eye[b]], dim=0)
        log_ratio = neg_aff[b][pos[b]] - denom
        terms.append(-log_ratio.mean())
    if not terms:
        raise ValueError("no positive pairs in batch: every message value is a singleton")
    return torch.stack(terms).sum()


def loss_i(z: torch.Tensor, t_all: torch.Tensor, message_values,
           tau_c: float | torch.Tensor) -> torch.Tensor:
    """Image-axis contrastive loss: each visual feature against all label features."""
    m = torch.as_tensor(message_values, dtype=torch.long)
    logits = z @ t_all.T / tau_c
    return nn.functional.cross_entropy(logits, m, reduction="sum")


def loss_t(z: torch.Tensor, t_all: torch.Tensor, message_values,
           tau_c: float | torch.Tensor) -> torch.Tensor:
    """Text-axis contrastive loss: each label against the batch features.

    For label k the positives are batch members carrying message k; labels
    with no positive in the batch are skipped.
    """
    m = torch.as_tensor(message_values, dtype=torch.long)
    logits = t_all @ z.T / tau_c  # (K, B)
    terms = []
    for k in range(len(t_all)):
        pos = m == k
        if not pos.any():
            continue
        num = torch.logsumexp(logits[k][pos], dim=0)
        den = torch.logsumexp(logits[k], dim=0)
        terms.append(den - num)
    if not terms:
        return z.sum() * 0.0
    return torch.stack(terms).sum()


def loss_mr(z, t_all, message_values, tau_c):
    """Message reconstruction: image axis + text axis."""
    return loss_i(z, t_all, message_values, tau_c) + loss_t(z, t_all, message_values, tau_c)


def loss_sc(s_prime: torch.Tensor, s_target: torch.Tensor) -> torch.Tensor:
    """Style consistency: squared L2 from each blended style to the target mean style."""
    if s_prime.shape[-1] != s_target.shape[-1]:
        raise ValueError(
            f"style dims differ: {s_prime.shape[-1]} vs {s_target.shape[-1]}"
        )
    return ((s_prime - s_target[None]) ** 2).sum()


class PerceptualExtractor(nn.Module):
    """Frozen random-feature pyramid standing in for a pretrained perceptual net.

    Four stride-2 conv+relu stages; every stage's output is a feature level.
    Weights are seeded at construction and never trained.
    """

    def __init__(self, channels=(8, 16, 32, 64), seed: int = 0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        layers = []
        in_ch = 1
        for out_ch in channels:
            conv = nn.Conv2d(in_ch, out_ch, 3, 2, 1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=g)
                                  * (2.0 / (in_ch * 9)) ** 0.5)
                conv.bias.zero_()
            layers.append(conv)
            in_ch = out_ch
        self.convs = nn.ModuleList(layers)
        self.requires_grad_(False)
        self.eval()

    def forward(self, x) -> list[torch.Tensor]:
        feats = []
        h = x
        for conv in self.convs:
            h = torch.relu(conv(h))
            feats.append(h)
        return feats


def loss_ir(images_a: torch.Tensor, images_b: torch.Tensor,
            extractor: PerceptualExtractor) -> torch.Tensor:
    """Perceptual reconstruction: per-level mean squared feature difference,
    summed over levels and batch."""
    if images_a.shape != images_b.shape:
        raise ValueError(f"image batches differ in shape: {tuple(images_a.shape)} vs {tuple(images_b.shape)}")
    fa = extractor(images_a)
    fb = extractor(images_b)
    total = images_a.new_zeros(())
    for a, b in zip(fa, fb):
        total = total + ((a - b) ** 2).mean(dim=(1, 2, 3)).sum()
    return total


_EPS = 1e-6


def loss_adv(scores_fake: torch.Tensor, scores_real: torch.Tensor,
             convention: str = "paper"):
    """Generator and discriminator objectives from raw scores in (0, 1).

    ``paper`` keeps the printed forms, minimized:
        L_G = sum log(1 - A(fake));    L_A = sum log A(fake) + log(1 - A(real))
    ``conventional`` is the textbook non-saturating pair:
        L_G = sum -log A(fake);        L_A = sum -log A(real) - log(1 - A(fake))
    Both drive A(real) -> 1, A(fake) -> 0 while the generator pushes A(fake) up.
    """
    f = scores_fake.clamp(_EPS, 1.0 - _EPS)
    r = scores_real.clamp(_EPS, 1.0 - _EPS)
    if convention == "paper":
        l_g = torch.log(1.0 - f).sum()
        l_a = (torch.log(f) + torch.log(1.0 - r)).sum()
    elif convention == "conventional":
        l_g = (-torch.log(f)).sum()
        l_a = (-torch.log(r) - torch.log(1.0 - f)).sum()
    else:
        raise ValueError(f"unknown adversarial convention {convention!r}")
    return l_g, l_a


class Discriminator(nn.Module):
    """Small conv classifier scoring glyph realness in (0, 1)."""

    def __init__(self, base: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(1, base, 3, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(base, 2 * base, 3, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * base, 4 * base, 3, 2, 1), nn.LeakyReLU(0.2),
        )
        self.head = nn.Linear(4 * base, 1)

    def forward(self, x):
        h = self.net(x).mean(dim=(2, 3))
        return torch.sigmoid(self.head(h)).squeeze(1)
