"""Discovery of installed TTF fonts usable as a desk-scale font set."""

from __future__ import annotations

from pathlib import Path


def matplotlib_font_dir() -> Path:
    import matplotlib

    return Path(matplotlib.__file__).parent / "mpl-data" / "fonts" / "ttf"


def discover_fonts(prefix: str = "DejaVu") -> dict[str, str]:
    """Installed fonts matching ``prefix``: font_id (file stem) -> path."""
    d = matplotlib_font_dir()
    out = {p.stem: str(p) for p in sorted(d.glob(f"{prefix}*.ttf"))}
    if not out:
        raise FileNotFoundError(f"no {prefix}*.ttf fonts under {d}")
    return out


# the pinned eight-font working set: element 0 is the watermark target,
# the rest are blending-basis fonts
FONT_SET_8 = (
    "DejaVuSans",
    "DejaVuSans-Bold",
    "DejaVuSans-Oblique",
    "DejaVuSans-BoldOblique",
    "DejaVuSerif",
    "DejaVuSerif-Bold",
    "DejaVuSansMono",
    "DejaVuSansMono-Bold",
)

# generalized-mode split of FONT_SET_8: the held-out pair is unseen by the
# watermark networks (the base font model still knows every installed font)
GEN_TRAIN_FONTS = (
    "DejaVuSans",
    "DejaVuSans-Bold",
    "DejaVuSans-Oblique",
    "DejaVuSerif",
    "DejaVuSansMono",
    "DejaVuSansMono-Bold",
)
GEN_HELDOUT_FONTS = ("DejaVuSans-BoldOblique", "DejaVuSerif-Bold")


def font_set(names=FONT_SET_8) -> dict[str, str]:
    all_fonts = discover_fonts()
    missing = [n for n in names if n not in all_fonts]
    if missing:
        raise FileNotFoundError(f"fonts not installed: {missing}")
    return {n: all_fonts[n] for n in names}
