"""Glyph rasterization, vocabulary, bit assignment, and document rendering/segmentation.

Conventions used across the package:

* glyph rasters are ``float32`` arrays of shape ``(GLYPH_SIZE, GLYPH_SIZE)``
  with values in [0, 1], white (1.0) background and dark (towards 0.0) strokes;
* the on-disk glyph dataset is one directory per font id containing one 8-bit
  grayscale PNG per codepoint, named ``<decimal codepoint>.png``;
* bitstream files are plain text of '0'/'1' characters with no separators;
* the layout sidecar is tab-separated lines
  ``page  x  y  w  h  codepoint  message_value``, one per rendered character.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from fontTools.ttLib import TTFont
from PIL import Image, ImageDraw, ImageFont

GLYPH_SIZE = 80
ALPHANUMERIC = "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"

# point size leaving a comfortable margin inside the 80 px canvas for the
# widest alphanumeric glyphs of common text fonts
_POINT_SIZE_FRACTION = 0.62


class MissingGlyphError(ValueError):
    """A font file does not contain an outline for the requested codepoint."""


class Vocabulary:
    """Ordered, duplicate-free set of characters; order defines dataset indexing."""

    def __init__(self, chars: Sequence[str]):
        entries = tuple(chars)
        if len(set(entries)) != len(entries):
            raise ValueError("vocabulary characters must be unique")
        if any(len(c) != 1 for c in entries):
            raise ValueError("vocabulary entries must be single characters")
        self.entries = entries
        self._index = {c: i for i, c in enumerate(entries)}

    @classmethod
    def alphanumeric(cls) -> "Vocabulary":
        return cls(ALPHANUMERIC)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i: int) -> str:
        return self.entries[i]

    def __contains__(self, char: str) -> bool:
        return char in self._index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.entries == other.entries

    def index(self, char: str) -> int:
        try:
            return self._index[char]
        except KeyError:
            raise KeyError(f"character {char!r} not in vocabulary") from None

    @property
    def codepoints(self) -> tuple[int, ...]:
        return tuple(ord(c) for c in self.entries)


@dataclass
class GlyphImage:
    pixels: np.ndarray  # (H, W) float32 in [0, 1]
    char_index: int
    font_id: str

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 2:
            raise ValueError("glyph pixels must be a 2-D array")


@dataclass
class MaskPair:
    font_mask: np.ndarray  # binary, 1 where strokes
    background_mask: np.ndarray  # binary complement


@lru_cache(maxsize=64)
def _load_font(font_file: str, point_size: int) -> ImageFont.FreeTypeFont:
    try:
        return ImageFont.truetype(font_file, point_size)
    except OSError as exc:
        raise OSError(f"cannot read font file {font_file!r}: {exc}") from exc


@lru_cache(maxsize=64)
def _font_codepoints(font_file: str) -> frozenset[int]:
    try:
        with TTFont(font_file, fontNumber=0, lazy=True) as tt:
            return frozenset(tt.getBestCmap().keys())
    except Exception as exc:
        raise OSError(f"cannot read font file {font_file!r}: {exc}") from exc


def rasterize_glyph(
    font_file,
    char: str,
    size: int = GLYPH_SIZE,
    *,
    vocab: Vocabulary | None = None,
    font_id: str | None = None,
) -> GlyphImage:
    """Render one character, centered, antialiased, white background.

    Raises MissingGlyphError when the font has no outline for ``char`` and
    OSError when the font file cannot be read.
    """
    font_file = str(font_file)
    if ord(char) not in _font_codepoints(font_file):
        raise MissingGlyphError(
            f"font {font_file!r} has no glyph for U+{ord(char):04X} ({char!r})"
        )
    font = _load_font(font_file, max(int(size * _POINT_SIZE_FRACTION), 1))
    img = Image.new("L", (size, size), 255)
    draw = ImageDraw.Draw(img)
    left, top, right, bottom = draw.textbbox((0, 0), char, font=font)
    w, h = right - left, bottom - top
    if w > 0 and h > 0:  # whitespace stays a blank canvas
        draw.text(((size - w) / 2 - left, (size - h) / 2 - top), char, font=font, fill=0)
    pixels = np.asarray(img, dtype=np.float32) / 255.0
    if vocab is None:
        vocab = Vocabulary.alphanumeric()
    char_index = vocab.index(char) if char in vocab else -1
    if font_id is None:
        font_id = Path(font_file).stem
    return GlyphImage(pixels=pixels, char_index=char_index, font_id=font_id)


def render_glyph_set(
    fonts: Mapping[str, str], vocab: Vocabulary, size: int = GLYPH_SIZE
) -> dict[str, np.ndarray]:
    """Rasterize the full vocabulary for each font: font_id -> (|V|, size, size)."""
    out = {}
    for font_id, font_file in fonts.items():
        stack = [
            rasterize_glyph(font_file, c, size, vocab=vocab, font_id=font_id).pixels
            for c in vocab
        ]
        out[font_id] = np.stack(stack).astype(np.float32)
    return out


def binarize(img, threshold: float = 0.5) -> MaskPair:
    """Split pixels into font strokes (below threshold) and background (complement)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"binarize threshold must be in (0, 1), got {threshold}")
    pixels = img.pixels if isinstance(img, GlyphImage) else np.asarray(img)
    font_mask = (pixels < threshold).astype(np.uint8)
    return MaskPair(font_mask=font_mask, background_mask=1 - font_mask)


# ---------------------------------------------------------------------------
# messages


@dataclass(frozen=True)
class Message:
    """One per-character payload: ``bits[0]`` is the most significant bit."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) < 1 or any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"message bits must be a non-empty 0/1 sequence: {self.bits}")

    @property
    def value(self) -> int:
        v = 0
        for b in self.bits:
            v = (v << 1) | b
        return v

    @classmethod
    def from_value(cls, value: int, a: int) -> "Message":
        if not 0 <= value < 2**a:
            raise ValueError(f"message value {value} out of range for {a} bits")
        return cls(tuple((value >> (a - 1 - i)) & 1 for i in range(a)))

    @classmethod
    def from_bits(cls, bits) -> "Message":
        return cls(tuple(int(b) for b in bits))

    def __str__(self):
        return "".join(str(b) for b in self.bits)


def assign_bits(bitstream, a: int) -> list[Message]:
    """Chunk a bitstream into a-bit messages, zero-padding the tail."""
    if a < 1:
        raise ValueError("bits per character must be >= 1")
    bits = [int(b) for b in bitstream]
    if any(b not in (0, 1) for b in bits):
        raise ValueError("bitstream must contain only 0/1")
    if not bits:
        return []
    if len(bits) % a:
        bits = bits + [0] * (a - len(bits) % a)
    return [Message(tuple(bits[i : i + a])) for i in range(0, len(bits), a)]


def read_bitstream(path) -> str:
    text = Path(path).read_text(encoding="ascii").strip()
    if any(c not in "01" for c in text):
        raise ValueError(f"{path}: bitstream files must contain only '0'/'1'")
    return text


def write_bitstream(path, bits: str):
    Path(path).write_text(str(bits), encoding="ascii")


# ---------------------------------------------------------------------------
# documents


@dataclass
class LayoutParams:
    cols: int = 25
    rows: int = 40
    cell: int = GLYPH_SIZE


@dataclass
class LayoutEntry:
    page: int
    x: int
    y: int
    w: int
    h: int
    codepoint: int
    message_value: int


@dataclass
class DocumentImage:
    pages: list[np.ndarray]  # each (H, W) float32 in [0, 1]
    layout: list[LayoutEntry] = field(default_factory=list)


def render_document(
    text: str,
    libraries: Mapping[int, Mapping[int, np.ndarray]],
    messages: Sequence[Message],
    layout_params: LayoutParams | None = None,
    vocab: Vocabulary | None = None,
) -> DocumentImage:
    """Draw ``text`` on fixed-pitch grid pages, character i taken from
    ``libraries[messages[i].value]``."""
    lp = layout_params or LayoutParams()
    vocab = vocab or Vocabulary.alphanumeric()
    if len(messages) < len(text):
        raise ValueError(f"need {len(text)} messages, got {len(messages)}")
    per_page = lp.cols * lp.rows
    n_pages = max((len(text) + per_page - 1) // per_page, 1)
    page_h, page_w = lp.rows * lp.cell, lp.cols * lp.cell
    pages = [np.ones((page_h, page_w), dtype=np.float32) for _ in range(n_pages)]
    layout: list[LayoutEntry] = []
    for i, char in enumerate(text):
        m = messages[i]
        try:
            library = libraries[m.value]
        except KeyError:
            raise KeyError(f"no font library for message value {m.value}") from None
        ci = vocab.index(char)
        if ci not in library:
            raise KeyError(
                f"library for message value {m.value} has no glyph for {char!r}"
            )
        glyph = np.asarray(library[ci], dtype=np.float32)
        if glyph.shape != (lp.cell, lp.cell):
            raise ValueError(
                f"library glyph shape {glyph.shape} does not match cell {lp.cell}"
            )
        page, slot = divmod(i, per_page)
        r, c = divmod(slot, lp.cols)
        y, x = r * lp.cell, c * lp.cell
        pages[page][y : y + lp.cell, x : x + lp.cell] = glyph
        layout.append(
            LayoutEntry(
                page=page, x=x, y=y, w=lp.cell, h=lp.cell,
                codepoint=ord(char), message_value=m.value,
            )
        )
    return DocumentImage(pages=pages, layout=layout)


def segment_characters(
    doc: DocumentImage,
    jitter: int = 0,
    rng: np.random.Generator | None = None,
    size: int = GLYPH_SIZE,
) -> list[np.ndarray]:
    """Crop one glyph per layout entry, optionally offset by integer jitter.

    Boxes pushed past the page edge are clamped back inside, never rejected.
    Crops are rescaled to ``size`` x ``size`` when the layout cell differs.
    """
    if jitter < 0:
        raise ValueError("jitter must be >= 0")
    if not doc.layout:
        raise ValueError("document has an empty layout")
    if jitter > 0 and rng is None:
        rng = np.random.default_rng(0)
    crops = []
    for entry in doc.layout:
        page = doc.pages[entry.page]
        x, y = entry.x, entry.y
        if jitter > 0:
            x += int(rng.integers(-jitter, jitter + 1))
            y += int(rng.integers(-jitter, jitter + 1))
        x = min(max(x, 0), page.shape[1] - entry.w)
        y = min(max(y, 0), page.shape[0] - entry.h)
        crop = page[y : y + entry.h, x : x + entry.w]
        if crop.shape != (size, size):
            img = Image.fromarray((np.clip(crop, 0, 1) * 255).round().astype(np.uint8))
            crop = np.asarray(img.resize((size, size), Image.BILINEAR), np.float32) / 255.0
        crops.append(crop.astype(np.float32))
    return crops


# ---------------------------------------------------------------------------
# on-disk formats


def save_glyph_dir(root, font_id: str, glyphs: np.ndarray, vocab: Vocabulary):
    """Write one font's glyphs as 8-bit grayscale PNGs named by decimal codepoint."""
    d = Path(root) / font_id
    d.mkdir(parents=True, exist_ok=True)
    for i, char in enumerate(vocab):
        arr = (np.clip(glyphs[i], 0.0, 1.0) * 255.0).round().astype(np.uint8)
        Image.fromarray(arr, mode="L").save(d / f"{ord(char)}.png")


def load_glyph_dir(root, vocab: Vocabulary) -> dict[str, np.ndarray]:
    """Load a glyph dataset tree: font_id -> (|V|, H, W) float32."""
    root = Path(root)
    out = {}
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        stack = []
        for char in vocab:
            f = d / f"{ord(char)}.png"
            if not f.exists():
                raise FileNotFoundError(f"{d.name}: missing glyph file {f.name}")
            stack.append(np.asarray(Image.open(f).convert("L"), np.float32) / 255.0)
        out[d.name] = np.stack(stack)
    if not out:
        raise FileNotFoundError(f"no font directories under {root}")
    return out


def save_layout(entries: Sequence[LayoutEntry], path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# page\tx\ty\tw\th\tcodepoint\tmessage_value\n")
        for e in entries:
            fh.write(
                f"{e.page}\t{e.x}\t{e.y}\t{e.w}\t{e.h}\t{e.codepoint}\t{e.message_value}\n"
            )


def load_layout(path) -> list[LayoutEntry]:
    entries = []
    with open(path, "r", encoding="ascii") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 7:
                raise ValueError(f"bad layout line: {raw!r}")
            p, x, y, w, h, cp, mv = (int(v) for v in parts)
            entries.append(LayoutEntry(p, x, y, w, h, cp, mv))
    return entries


def save_document(doc: DocumentImage, prefix) -> list[str]:
    """Write page PNGs (prefix.png, or prefix.p<N>.png when multi-page) + layout sidecar."""
    prefix = str(prefix)
    paths = []
    for i, page in enumerate(doc.pages):
        path = f"{prefix}.png" if len(doc.pages) == 1 else f"{prefix}.p{i:03d}.png"
        arr = (np.clip(page, 0.0, 1.0) * 255.0).round().astype(np.uint8)
        Image.fromarray(arr, mode="L").save(path)
        paths.append(path)
    save_layout(doc.layout, f"{prefix}.layout.tsv")
    return paths


def load_document(page_paths: Sequence, layout_path) -> DocumentImage:
    pages = [
        np.asarray(Image.open(p).convert("L"), np.float32) / 255.0 for p in page_paths
    ]
    return DocumentImage(pages=pages, layout=load_layout(layout_path))
