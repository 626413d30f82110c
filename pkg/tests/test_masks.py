import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from talkseg.exceptions import InvalidInputError
from talkseg.masks import (
    BACKGROUND, DEFAULT_PALETTE, EYE, HAIR, SKIN, ClassPalette, EditSpec, MaskPair, RAW_CLASSES,
    apply_edit, compute_class_weights, decode, downsample, merge_classes, occlude_lower_half,
    one_hot, parse_edit_specs,
)

from oracles import class_weights_loop

label_maps = arrays(np.int64, st.tuples(st.integers(1, 16), st.integers(1, 16)), elements=st.integers(0, 11))


class TestPalette:
    def test_twelve_dense_classes(self):
        assert DEFAULT_PALETTE.num_classes == 12
        assert DEFAULT_PALETTE.labels[0] == "BACKGROUND" and DEFAULT_PALETTE.labels[11] == "HAIR"

    def test_left_right_pairs_share_id(self):
        table = DEFAULT_PALETTE.merge_table
        assert table[RAW_CLASSES.index("l_eye")] == table[RAW_CLASSES.index("r_eye")] == EYE
        assert table[RAW_CLASSES.index("hat")] == HAIR
        assert table[RAW_CLASSES.index("cloth")] == BACKGROUND

    def test_manifest_round_trip(self):
        text = DEFAULT_PALETTE.to_manifest()
        assert "4 -> EYE" in text.splitlines()
        assert ClassPalette.from_manifest(text) == DEFAULT_PALETTE

    def test_partial_merge_table_rejected(self):
        with pytest.raises(InvalidInputError):
            ClassPalette(merge_table={0: 0})

    def test_index_by_name_and_id(self):
        assert DEFAULT_PALETTE.index("hair") == HAIR
        assert DEFAULT_PALETTE.index(3) == EYE
        with pytest.raises(InvalidInputError):
            DEFAULT_PALETTE.index("TEETH")


class TestMerge:
    def test_eyes_merge(self):
        raw = np.array([[4, 5]])
        assert merge_classes(raw).tolist() == [[EYE, EYE]]

    def test_background_identity(self):
        assert np.array_equal(merge_classes(np.zeros((4, 4), int)), np.zeros((4, 4), int))

    def test_all_raw_ids_give_twelve_classes(self):
        rng = np.random.default_rng(0)
        raw = rng.permutation(np.resize(np.arange(19), 64)).reshape(8, 8)
        out = merge_classes(raw)
        expected = [[DEFAULT_PALETTE.merge_table[int(v)] for v in row] for row in raw]
        assert out.tolist() == expected
        assert len(np.unique(out)) == 12

    def test_out_of_range_named(self):
        with pytest.raises(InvalidInputError, match="19"):
            merge_classes(np.array([[0, 19]]))

    def test_canonical_ids_fixed(self):
        # raw ids whose canonical target is itself stay put: merge is idempotent on those
        table = DEFAULT_PALETTE.merge_table
        fixed = [r for r in range(12) if table[r] == r]
        assert fixed == [0, 1, 2]


class TestOneHot:
    def test_small_example(self):
        oh = one_hot(np.array([[0, 1], [2, 0]]), 3)
        assert oh[0].tolist() == [[1, 0], [0, 1]]
        assert oh[1].tolist() == [[0, 1], [0, 0]]
        assert oh[2].tolist() == [[0, 0], [1, 0]]

    def test_uniform_label(self):
        oh = one_hot(np.full((3, 3), 5), 12)
        assert oh[5].all() and oh.sum() == 9

    @settings(max_examples=50, deadline=None)
    @given(label_maps)
    def test_round_trip(self, m):
        oh = one_hot(m, 12)
        assert np.array_equal(decode(oh), m)
        assert np.all(oh.sum(0) == 1)

    def test_label_too_large(self):
        with pytest.raises(InvalidInputError):
            one_hot(np.array([[12]]), 12)


class TestClassWeights:
    def test_toy_fractions(self):
        corpus = [np.array([[0, 0, 1, 2]])]
        w = compute_class_weights(corpus, 3)
        np.testing.assert_allclose(w, [0.6, 1.2, 1.2], rtol=1e-5)

    def test_uniform_areas_exact_ones(self):
        corpus = [np.arange(12).reshape(3, 4)]
        assert np.array_equal(compute_class_weights(corpus, 12), np.ones(12))

    def test_absent_class_hits_ceiling(self):
        # with 12 classes the absent one's normalized inverse area is ~12, above the ceiling
        corpus = [np.arange(11).reshape(1, 11)]
        assert compute_class_weights(corpus, 12)[11] == 10.0

    def test_matches_loop(self):
        rng = np.random.default_rng(3)
        maps = [rng.integers(0, 5, (6, 7)) for _ in range(3)]
        np.testing.assert_allclose(compute_class_weights(maps, 6), class_weights_loop(maps, 6), rtol=1e-12)

    def test_empty_corpus(self):
        with pytest.raises(InvalidInputError):
            compute_class_weights([], 12)


class TestOcclusion:
    def test_rows_zeroed(self):
        oh = one_hot(np.random.default_rng(0).integers(0, 12, (4, 4)))
        out = occlude_lower_half(oh)
        assert not out[:, 2:].any() and np.array_equal(out[:, :2], oh[:, :2])

    def test_h2(self):
        out = occlude_lower_half(np.ones((3, 2, 2)))
        assert out[:, 1].sum() == 0 and out[:, 0].all()

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.int64, st.tuples(st.integers(2, 12), st.integers(1, 8)), elements=st.integers(0, 11)))
    def test_idempotent_and_row_count(self, m):
        oh = one_hot(m)
        once = occlude_lower_half(oh)
        assert np.array_equal(occlude_lower_half(once), once)
        h = m.shape[0]
        zero_rows = sum(1 for y in range(h) if not once[:, y].any())
        assert zero_rows == h - h // 2

    def test_mask_pair_invariant(self):
        m = np.random.default_rng(1).integers(0, 12, (8, 8))
        pair = MaskPair.from_labels(m, m)
        assert pair.stacked().shape == (24, 8, 8)
        with pytest.raises(InvalidInputError):
            MaskPair(one_hot(m), one_hot(m))


class TestDownsample:
    def test_block_constant(self):
        m = np.kron(np.array([[1, 2], [3, 4]]), np.ones((2, 2), int))
        assert downsample(m, 2, 2).tolist() == [[1, 2], [3, 4]]

    def test_identity(self):
        m = np.random.default_rng(0).integers(0, 12, (4, 4))
        assert np.array_equal(downsample(m, 4, 4), m)

    def test_matches_index_loop(self):
        m = np.random.default_rng(2).integers(0, 12, (8, 8))
        expected = [[m[2 * y, 2 * x] for x in range(4)] for y in range(4)]
        assert downsample(m, 4, 4).tolist() == expected

    def test_non_divisible(self):
        with pytest.raises(InvalidInputError):
            downsample(np.zeros((8, 8), int), 3, 3)

    @settings(max_examples=30, deadline=None)
    @given(label_maps.filter(lambda m: m.shape[0] % 2 == 0 and m.shape[1] % 2 == 0))
    def test_no_new_labels(self, m):
        out = downsample(m, m.shape[0] // 2, m.shape[1] // 2)
        assert set(np.unique(out)) <= set(np.unique(m))


def _face_with_eyes():
    m = np.zeros((16, 16), int)
    m[2:14, 2:14] = SKIN
    m[5:7, 4:6] = EYE
    m[5:7, 10:12] = EYE
    return m


class TestEdits:
    def test_blink_removes_eyes(self):
        m = _face_with_eyes()
        out = apply_edit(m, EditSpec("blink", EYE, (4, 3, 8, 13)))
        assert not (out == EYE).any()
        assert (out == SKIN).sum() == (m == SKIN).sum() + (m == EYE).sum()
        assert (out == BACKGROUND).sum() == (m == BACKGROUND).sum()

    def test_empty_stencil(self):
        m = _face_with_eyes()
        assert np.array_equal(apply_edit(m, EditSpec("blink", EYE, (5, 5, 5, 5))), m)

    def test_no_eyes(self):
        m = np.full((8, 8), SKIN)
        assert np.array_equal(apply_edit(m, EditSpec("blink", EYE, (1, 1, 4, 4))), m)

    def test_stencil_outside_face(self):
        with pytest.raises(InvalidInputError):
            apply_edit(_face_with_eyes(), EditSpec("blink", EYE, (0, 0, 8, 8)))

    def test_swap_kinds_leave_map(self):
        m = _face_with_eyes()
        assert np.array_equal(apply_edit(m, EditSpec("region_texture_swap", HAIR, "ref#3")), m)

    def test_unknown_kind(self):
        with pytest.raises(InvalidInputError):
            EditSpec("recolor", HAIR)

    def test_region_out_of_palette(self):
        with pytest.raises(InvalidInputError):
            EditSpec("region_texture_swap", 12, "x")

    def test_record_round_trip(self):
        text = "blink EYE 4,3,8,13 frames=10-15\nregion_texture_swap HAIR clips/a#3\n# note\n"
        specs = parse_edit_specs(text)
        assert specs[0].frames == (10, 15) and specs[0].active(12) and not specs[0].active(16)
        assert specs[1].region_id == HAIR
        assert [EditSpec.from_record(s.to_record()) for s in specs] == specs
