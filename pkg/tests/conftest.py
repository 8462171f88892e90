import numpy as np
import pytest
import torch

from fontmark.fonts import font_set
from fontmark.glyphs import Vocabulary, render_glyph_set

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def vocab():
    return Vocabulary.alphanumeric()


@pytest.fixture(scope="session")
def fonts8():
    return font_set()


@pytest.fixture(scope="session")
def glyph_set(fonts8, vocab):
    """Rasterized 8-font x 62-char working set, shared across the suite."""
    return render_glyph_set(fonts8, vocab)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
