import numpy as np
import pytest

from fontmark.glyphs import (
    DocumentImage,
    LayoutParams,
    Message,
    MissingGlyphError,
    Vocabulary,
    assign_bits,
    binarize,
    load_document,
    load_glyph_dir,
    load_layout,
    rasterize_glyph,
    read_bitstream,
    render_document,
    save_document,
    save_glyph_dir,
    save_layout,
    segment_characters,
    write_bitstream,
)


@pytest.fixture(scope="module")
def serif_path(fonts8):
    return fonts8["DejaVuSerif"]


class TestVocabulary:
    def test_alphanumeric_size_and_order(self, vocab):
        assert len(vocab) == 62
        assert vocab[0] == "0" and vocab[9] == "9"
        assert vocab[10] == "a" and vocab[36] == "A" and vocab[61] == "Z"

    def test_index_round_trip(self, vocab):
        for i, c in enumerate(vocab):
            assert vocab.index(c) == i

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            Vocabulary("aab")

    def test_unknown_char(self, vocab):
        with pytest.raises(KeyError):
            vocab.index("!")


class TestRasterize:
    def test_space_is_pure_background(self, serif_path):
        g = rasterize_glyph(serif_path, " ")
        assert (g.pixels == 1.0).all()

    def test_stroke_presence_and_margin(self, serif_path):
        g = rasterize_glyph(serif_path, "A")
        assert g.pixels.shape == (80, 80)
        assert g.pixels.min() < 0.5
        assert (g.pixels[0] == 1.0).all() and (g.pixels[-1] == 1.0).all()
        assert (g.pixels[:, 0] == 1.0).all() and (g.pixels[:, -1] == 1.0).all()

    def test_deterministic(self, serif_path):
        a = rasterize_glyph(serif_path, "Q").pixels
        b = rasterize_glyph(serif_path, "Q").pixels
        assert np.array_equal(a, b)

    def test_range_and_metadata(self, serif_path, vocab):
        g = rasterize_glyph(serif_path, "z", vocab=vocab, font_id="serif")
        assert 0.0 <= g.pixels.min() and g.pixels.max() <= 1.0
        assert g.char_index == vocab.index("z")
        assert g.font_id == "serif"

    def test_missing_glyph_names_codepoint_and_font(self, serif_path):
        with pytest.raises(MissingGlyphError, match="U\\+E000"):
            rasterize_glyph(serif_path, "")

    def test_unreadable_font_file(self, tmp_path):
        bad = tmp_path / "not_a_font.ttf"
        bad.write_bytes(b"definitely not a font")
        with pytest.raises(OSError, match="not_a_font"):
            rasterize_glyph(bad, "A")


class TestBinarize:
    def test_all_background(self):
        mp = binarize(np.ones((8, 8), np.float32), 0.5)
        assert mp.font_mask.sum() == 0
        assert (mp.background_mask == 1).all()

    def test_all_strokes(self):
        mp = binarize(np.zeros((8, 8), np.float32), 0.5)
        assert (mp.font_mask == 1).all()

    def test_counts_match_direct_scan(self, rng):
        img = rng.random((40, 40)).astype(np.float32)
        mp = binarize(img, 0.37)
        k = int(sum(1 for v in img.ravel() if v < 0.37))
        assert int(mp.font_mask.sum()) == k

    def test_complement_invariant(self, rng):
        for _ in range(20):
            img = rng.random((16, 16)).astype(np.float32)
            thr = float(rng.uniform(0.05, 0.95))
            mp = binarize(img, thr)
            assert ((mp.font_mask + mp.background_mask) == 1).all()

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            binarize(np.ones((4, 4)), 0.0)
        with pytest.raises(ValueError):
            binarize(np.ones((4, 4)), 1.0)


class TestMessages:
    def test_paper_chunking(self):
        out = assign_bits("0010", 2)
        assert [str(m) for m in out] == ["00", "10"]
        assert [m.value for m in out] == [0, 2]

    def test_single_bit(self):
        assert [m.value for m in assign_bits("1", 1)] == [1]

    def test_zero_padding(self):
        out = assign_bits("101", 2)
        assert [str(m) for m in out] == ["10", "10"]

    def test_empty(self):
        assert assign_bits("", 4) == []

    def test_round_trip_random(self, rng):
        for a in (1, 2, 4):
            for _ in range(25):
                n = int(rng.integers(1, 64))
                bits = "".join(str(int(b)) for b in rng.integers(0, 2, n))
                msgs = assign_bits(bits, a)
                concat = "".join(str(m) for m in msgs)
                assert concat[:n] == bits
                assert set(concat[n:]) <= {"0"}

    def test_value_bits_consistency(self):
        for a in (1, 2, 4):
            for v in range(2**a):
                m = Message.from_value(v, a)
                assert m.value == v
                assert len(m.bits) == a

    def test_bad_bits(self):
        with pytest.raises(ValueError):
            Message((0, 2))
        with pytest.raises(ValueError):
            assign_bits("012", 1)


def _toy_libraries(glyph_set, vocab, n_values=2):
    """Fake message libraries: value v = font v's glyphs (visibly distinct)."""
    font_ids = list(glyph_set)
    return {
        v: {i: glyph_set[font_ids[v]][i] for i in range(len(vocab))}
        for v in range(n_values)
    }


class TestDocument:
    def test_single_char(self, glyph_set, vocab):
        libs = _toy_libraries(glyph_set, vocab)
        doc = render_document("R", libs, [Message.from_value(0, 1)])
        e = doc.layout[0]
        crop = doc.pages[e.page][e.y : e.y + e.h, e.x : e.x + e.w]
        assert np.array_equal(crop, libs[0][vocab.index("R")])

    def test_two_chars_two_libraries(self, glyph_set, vocab):
        libs = _toy_libraries(glyph_set, vocab)
        msgs = [Message.from_value(0, 1), Message.from_value(1, 1)]
        doc = render_document("ab", libs, msgs)
        for e, m, c in zip(doc.layout, msgs, "ab"):
            crop = doc.pages[e.page][e.y : e.y + e.h, e.x : e.x + e.w]
            assert np.array_equal(crop, libs[m.value][vocab.index(c)])
            assert e.message_value == m.value and e.codepoint == ord(c)

    def test_empty_text(self, glyph_set, vocab):
        doc = render_document("", _toy_libraries(glyph_set, vocab), [])
        assert doc.layout == []
        assert len(doc.pages) == 1 and (doc.pages[0] == 1.0).all()

    def test_boxes_do_not_overlap(self, glyph_set, vocab):
        libs = _toy_libraries(glyph_set, vocab)
        text = "abcdefgh"
        doc = render_document(text, libs, [Message.from_value(0, 1)] * len(text),
                              LayoutParams(cols=3, rows=2))
        seen = set()
        for e in doc.layout:
            key = (e.page, e.x, e.y)
            assert key not in seen
            seen.add(key)
        assert len(doc.pages) == 2  # 8 chars at 6 per page

    def test_missing_library_glyph_names_char_and_value(self, glyph_set, vocab):
        libs = _toy_libraries(glyph_set, vocab)
        del libs[1][vocab.index("b")]
        msgs = [Message.from_value(1, 1)]
        with pytest.raises(KeyError, match="'b'"):
            render_document("b", libs, msgs)

    def test_segment_identity_without_jitter(self, glyph_set, vocab):
        libs = _toy_libraries(glyph_set, vocab)
        text = "xyz01"
        doc = render_document(text, libs, [Message.from_value(0, 1)] * len(text))
        crops = segment_characters(doc, jitter=0)
        for crop, c in zip(crops, text):
            assert np.array_equal(crop, libs[0][vocab.index(c)])

    def test_segment_jitter_changes_crops_but_never_fails(self, glyph_set, vocab, rng):
        libs = _toy_libraries(glyph_set, vocab)
        text = "mnop"
        doc = render_document(text, libs, [Message.from_value(0, 1)] * len(text))
        crops = segment_characters(doc, jitter=3, rng=rng)
        assert all(c.shape == (80, 80) for c in crops)
        base = segment_characters(doc, jitter=0)
        assert any(not np.array_equal(a, b) for a, b in zip(crops, base))

    def test_segment_clamps_at_page_edge(self, glyph_set, vocab, rng):
        libs = _toy_libraries(glyph_set, vocab)
        doc = render_document("a", libs, [Message.from_value(0, 1)],
                              LayoutParams(cols=1, rows=1))
        crops = segment_characters(doc, jitter=200, rng=rng)
        assert crops[0].shape == (80, 80)

    def test_segment_requires_layout(self):
        doc = DocumentImage(pages=[np.ones((80, 80), np.float32)], layout=[])
        with pytest.raises(ValueError):
            segment_characters(doc)


class TestDiskFormats:
    def test_glyph_dir_round_trip(self, tmp_path, glyph_set, vocab):
        fid = next(iter(glyph_set))
        save_glyph_dir(tmp_path, fid, glyph_set[fid], vocab)
        cp = ord(vocab[0])
        assert (tmp_path / fid / f"{cp}.png").exists()
        loaded = load_glyph_dir(tmp_path, vocab)
        assert set(loaded) == {fid}
        # 8-bit quantization round trip
        assert np.abs(loaded[fid] - glyph_set[fid]).max() <= 0.5 / 255.0 + 1e-6

    def test_bitstream_round_trip(self, tmp_path):
        write_bitstream(tmp_path / "b.txt", "0110101")
        assert read_bitstream(tmp_path / "b.txt") == "0110101"
        (tmp_path / "bad.txt").write_text("01x0")
        with pytest.raises(ValueError):
            read_bitstream(tmp_path / "bad.txt")

    def test_layout_round_trip(self, tmp_path, glyph_set, vocab):
        libs = _toy_libraries(glyph_set, vocab)
        doc = render_document("abc", libs, [Message.from_value(0, 1)] * 3)
        save_layout(doc.layout, tmp_path / "l.tsv")
        assert load_layout(tmp_path / "l.tsv") == doc.layout

    def test_document_round_trip(self, tmp_path, glyph_set, vocab):
        libs = _toy_libraries(glyph_set, vocab)
        doc = render_document("abc", libs, [Message.from_value(0, 1)] * 3)
        paths = save_document(doc, tmp_path / "doc")
        loaded = load_document(paths, tmp_path / "doc.layout.tsv")
        assert loaded.layout == doc.layout
        assert np.abs(loaded.pages[0] - doc.pages[0]).max() <= 0.5 / 255.0 + 1e-6
