"""fontmark: trainable font watermarking.

Messages are embedded into documents by swapping glyphs for imperceptibly
perturbed variants synthesized on a learned font-style manifold, and are
recovered by a contrastive image-text decoder trained against a simulated
transmission-distortion chain.

Layered roughly bottom-up:

* ``glyphs``       glyph rasterization, vocabulary, bit assignment, documents
* ``font_model``   style-content disentangled font synthesis network
* ``encoder``      watermark encoder: blend-weight net + binarization filter
* ``distortions``  differentiable noise chain and background augmentation
* ``decoder``      contrastive image-text decoder and label sets
* ``losses``       training objectives
* ``pcgrad``       gradient surgery between conflicting objectives
* ``training``     the two-stage end-to-end training driver
* ``pipeline``     font libraries, document embed/extract, metrics, evaluation
"""

from fontmark.glyphs import (
    ALPHANUMERIC,
    GLYPH_SIZE,
    DocumentImage,
    GlyphImage,
    LayoutParams,
    MaskPair,
    Message,
    MissingGlyphError,
    Vocabulary,
    assign_bits,
    binarize,
    rasterize_glyph,
    render_document,
    render_glyph_set,
    segment_characters,
)

__version__ = "0.1.0"
