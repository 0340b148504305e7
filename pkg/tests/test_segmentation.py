import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from porecrit.errors import EmptyMask
from porecrit.segmentation import (
    LabelField, SegmentationConfig, filter_pores, label_components, threshold_fixed,
    threshold_otsu_per_slice,
)
from porecrit.volume_io import SyntheticSpec, Volume, generate_synthetic_volume

from oracles import flood_fill_components, otsu_exhaustive, partition_of


def vol(arr):
    return Volume(np.asarray(arr, dtype=np.uint8))


# ---------------------------------------------------------------- thresholds

def test_threshold_inclusive_at_250():
    v = vol([[[250, 249]]])
    assert threshold_fixed(v, SegmentationConfig(I_thr=250)).tolist() == [[[True, False]]]


def test_threshold_all_zero_volume():
    assert not threshold_fixed(vol(np.zeros((3, 4, 5)))).any()


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, (3, 4, 4)), st.integers(0, 254))
def test_threshold_count_monotone(arr, t):
    v = vol(arr)
    lo = threshold_fixed(v, SegmentationConfig(I_thr=t)).sum()
    hi = threshold_fixed(v, SegmentationConfig(I_thr=t + 1)).sum()
    assert hi <= lo


def test_otsu_bimodal_slice():
    sl = np.full((4, 8), 10, dtype=np.uint8)
    sl[:, 4:] = 240
    t = otsu_exhaustive(sl)
    assert 10 <= t < 240
    mask = threshold_otsu_per_slice(vol(sl[None]))
    assert np.array_equal(mask[0], sl > t)
    assert np.array_equal(mask[0], sl == 240)


def test_otsu_constant_slice_is_background():
    assert not threshold_otsu_per_slice(vol(np.full((1, 5, 5), 128))).any()


def test_otsu_slices_are_independent():
    bimodal = np.full((4, 4), 10, dtype=np.uint8)
    bimodal[:2] = 240
    stack = np.stack([bimodal, np.full((4, 4), 128, np.uint8)])
    mask = threshold_otsu_per_slice(vol(stack))
    assert np.array_equal(mask[0], bimodal == 240)
    assert not mask[1].any()
    alone = threshold_otsu_per_slice(vol(bimodal[None]))
    assert np.array_equal(mask[0], alone[0])


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint8, (2, 5, 5)))
def test_otsu_matches_exhaustive_scan(arr):
    mask = threshold_otsu_per_slice(vol(arr))
    for z in range(arr.shape[0]):
        t = otsu_exhaustive(arr[z])
        expected = np.zeros_like(arr[z], bool) if t is None else arr[z] > t
        assert np.array_equal(mask[z], expected)


# ---------------------------------------------------------------- labelling

def test_single_voxel_component():
    m = np.zeros((3, 3, 3), bool)
    m[1, 1, 1] = True
    lf = label_components(m)
    assert lf.component_sizes == {1: 1}


@pytest.mark.parametrize("connectivity,expected", [(26, 1), (6, 2)])
def test_diagonal_voxels(connectivity, expected):
    m = np.zeros((1, 2, 2), bool)
    m[0, 0, 0] = m[0, 1, 1] = True
    assert label_components(m, connectivity).n_components == expected


def test_labels_follow_raster_first_encounter():
    m = np.zeros((2, 4, 4), bool)
    m[1, 0, 0] = True      # encountered last in raster order
    m[0, 3, 3] = True
    m[0, 0, 2] = True      # encountered first
    lf = label_components(m, 6)
    assert lf.labels[0, 0, 2] == 1
    assert lf.labels[0, 3, 3] == 2
    assert lf.labels[1, 0, 0] == 3


@pytest.mark.parametrize("connectivity", [6, 26])
def test_random_masks_match_flood_fill(connectivity):
    rng = np.random.default_rng(123)
    for _ in range(20):
        m = rng.random((8, 8, 8)) < 0.4
        lf = label_components(m, connectivity)
        assert partition_of(lf.labels) == set(flood_fill_components(m, connectivity))
        assert sorted(lf.component_sizes) == list(range(1, lf.n_components + 1))
        assert sum(lf.component_sizes.values()) == m.sum()


@settings(max_examples=20, deadline=None)
@given(arrays(bool, (4, 5, 6)), st.sampled_from([6, 26]))
def test_labels_property_vs_oracle(m, connectivity):
    assert partition_of(label_components(m, connectivity).labels) == set(flood_fill_components(m, connectivity))


# ---------------------------------------------------------------- size filter

def field_with_sizes(sizes):
    """Label field whose component k+1 has sizes[k] voxels (components on separate rows)."""
    width = max(sizes)
    labels = np.zeros((1, 2 * len(sizes), width), dtype=np.int32)
    for k, s in enumerate(sizes):
        labels[0, 2 * k, :s] = k + 1
    return LabelField(labels, {k + 1: s for k, s in enumerate(sizes)})


def test_filter_window_example():
    res = filter_pores(field_with_sizes([1000, 30, 5, 2]))
    assert res.boundary_size == 1000 and res.boundary_label == 1
    assert [p.voxel_count for p in res.pores] == [5]
    assert res.rejected_counts == {"too_small": 1, "too_large": 1}


def test_filter_three_voxels_admissible():
    res = filter_pores(field_with_sizes([1000, 3]))
    assert [p.voxel_count for p in res.pores] == [3]


def test_filter_single_component():
    res = filter_pores(field_with_sizes([500]))
    assert res.boundary_size == 500 and res.pores == []


def test_filter_empty_mask():
    with pytest.raises(EmptyMask):
        filter_pores(label_components(np.zeros((2, 2, 2), bool)))


def test_filter_upper_bound_strict():
    # 0.01 * 1000 = 10: a 10-voxel component is rejected, 9 kept
    res = filter_pores(field_with_sizes([1000, 10, 9]))
    assert [p.voxel_count for p in res.pores] == [9]


def test_boundary_tie_takes_smallest_label():
    res = filter_pores(field_with_sizes([40, 40, 3]))
    assert res.boundary_label == 1
    assert any("SuspectBoundary" in w for w in res.warnings)


def test_no_admissible_window_warning():
    res = filter_pores(field_with_sizes([300, 3]))
    assert res.pores == []
    assert any(w.startswith("NoAdmissibleSizeWindow") for w in res.warnings)


def test_pores_ordered_by_size_then_label():
    res = filter_pores(field_with_sizes([2000, 4, 7, 4, 12]))
    assert [(p.voxel_count, p.label) for p in res.pores] == [(12, 5), (7, 3), (4, 2), (4, 4)]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 400), min_size=1, max_size=12))
def test_filter_invariants(sizes):
    res = filter_pores(field_with_sizes(sizes), SegmentationConfig())
    a_max = max(sizes)
    assert res.boundary_size == a_max
    assert res.boundary_label not in [p.label for p in res.pores]
    for p in res.pores:
        assert 2 < p.voxel_count < 0.01 * a_max
    assert len(res.pores) + sum(res.rejected_counts.values()) == len(sizes) - 1


def test_synthetic_retained_count_equals_planted():
    spec = SyntheticSpec(dims=(48, 64, 64), pore_count=30, seed=21)
    v, truth = generate_synthetic_volume(spec)
    lf = label_components(threshold_fixed(v), 26)
    res = filter_pores(lf)
    assert len(res.pores) == 30
    assert sorted(p.voxel_count for p in res.pores) == sorted(p.voxel_count for p in truth.pores)
