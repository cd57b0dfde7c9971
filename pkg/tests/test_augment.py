import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionkit import augment
from lesionkit.augment import (
    AugmentPlan,
    DatasetManifest,
    ManifestRecord,
    balance_patches,
    build_dm,
    build_dr,
    lesion_plan,
    patch_plan,
)


def make_manifest(counts: dict) -> DatasetManifest:
    records = []
    for label, n in counts.items():
        for i in range(n):
            records.append(ManifestRecord(f"{label}_{i:05d}", f"{label}/{i:05d}.jpg", label))
    return DatasetManifest(records)


def test_rotation_set_counts_match_published_table():
    src = make_manifest({"melanoma": 374, "seborrheic_keratosis": 254, "nevus": 1372})
    dr = build_dr(src, lesion_plan())
    counts = dr.count_by_label()
    assert counts["melanoma"] == 7480
    assert counts["seborrheic_keratosis"] == 5080
    assert counts["nevus"] == 10976
    assert len(dr) == 23536


def test_mirror_set_pairs_one_to_one():
    src = make_manifest({"melanoma": 374, "seborrheic_keratosis": 254, "nevus": 1372})
    dr = build_dr(src, lesion_plan())
    dm = build_dm(dr, seed=7)
    assert len(dm) == 23536
    for a, b in zip(dr, dm):
        assert b.item_id == f"{a.item_id}_f"
        assert b.angle_deg == a.angle_deg
        assert b.flip_axis in ("x", "y")
        assert a.flip_axis is None


def test_mirror_set_is_seed_deterministic():
    src = make_manifest({"melanoma": 5, "nevus": 3, "seborrheic_keratosis": 2})
    dr = build_dr(src, lesion_plan())
    assert build_dm(dr, seed=3) == build_dm(dr, seed=3)
    flips_a = [r.flip_axis for r in build_dm(dr, seed=3)]
    flips_b = [r.flip_axis for r in build_dm(dr, seed=4)]
    assert len(flips_a) == len(flips_b)


def test_empty_manifest_stays_empty():
    assert len(build_dr(DatasetManifest(), lesion_plan())) == 0
    assert len(build_dm(DatasetManifest(), seed=0)) == 0


def test_angle_grid_includes_zero_and_every_step():
    src = make_manifest({"melanoma": 1})
    dr = build_dr(src, lesion_plan())
    angles = sorted(r.angle_deg for r in dr)
    assert angles == [float(a) for a in range(0, 360, 18)]


@given(
    st.dictionaries(
        st.sampled_from(["melanoma", "seborrheic_keratosis", "nevus"]),
        st.integers(0, 12),
        max_size=3,
    ),
    st.sampled_from([18, 45, 90, 120]),
)
@settings(max_examples=30, deadline=None)
def test_rotation_count_law(counts, step):
    src = make_manifest(counts)
    plan = AugmentPlan(rotation_step={label: step for label in counts})
    dr = build_dr(src, plan)
    assert len(dr) == sum(counts.values()) * (360 // step)
    for label, n in counts.items():
        if n:
            assert dr.count_by_label()[label] == n * (360 // step)


def test_step_must_divide_360():
    with pytest.raises(ValueError, match="divide 360"):
        AugmentPlan(rotation_step={"melanoma": 25})
    src = make_manifest({"melanoma": 1})
    with pytest.raises(ValueError, match="no rotation step"):
        build_dr(src, AugmentPlan(rotation_step={"nevus": 45}))


def test_patch_balance_matches_published_table():
    src = make_manifest({"B": 90000, "PN": 80000, "NN": 3227, "MC": 4606, "S": 2081})
    out = balance_patches(src, patch_plan(), seed=11)
    counts = out.count_by_label()
    assert counts["B"] == 87089
    assert counts["PN"] == 77325
    assert counts["NN"] == 12908
    assert counts["MC"] == 18424
    assert counts["S"] == 8324


def test_patch_expansion_has_every_angle_pair_once():
    src = make_manifest({"NN": 4, "B": 6})
    out = balance_patches(src, AugmentPlan(sample_targets={"B": 3}), seed=0)
    nn = [(r.source_path, r.angle_deg) for r in out if r.label == "NN"]
    assert len(nn) == 16
    assert len(set(nn)) == 16
    assert {a for _, a in nn} == {0.0, 90.0, 180.0, 270.0}


def test_down_sampling_is_without_replacement_and_deterministic():
    src = make_manifest({"B": 50})
    plan = AugmentPlan(sample_targets={"B": 20})
    out1 = balance_patches(src, plan, seed=5)
    out2 = balance_patches(src, plan, seed=5)
    assert [r.item_id for r in out1] == [r.item_id for r in out2]
    ids = [r.item_id for r in out1]
    assert len(set(ids)) == 20


def test_down_sampling_target_above_pool_is_an_error():
    src = make_manifest({"B": 10})
    with pytest.raises(ValueError, match="cannot sample"):
        balance_patches(src, AugmentPlan(sample_targets={"B": 11}), seed=0)
    with pytest.raises(ValueError, match="unknown patch class"):
        balance_patches(make_manifest({"Q": 1}), AugmentPlan(), seed=0)


def test_replayed_transforms_preserve_dimensions():
    rng = np.random.default_rng(0)
    img = rng.random((10, 14, 3))
    src = make_manifest({"melanoma": 1})
    dm = build_dm(build_dr(src, lesion_plan()), seed=1)
    for rec in list(dm)[:5]:
        assert rec.replay(img).shape == img.shape


def test_manifest_rejects_duplicate_ids():
    with pytest.raises(ValueError, match="unique"):
        DatasetManifest([ManifestRecord("a", "p", "melanoma"), ManifestRecord("a", "q", "nevus")])


def test_csv_round_trip(tmp_path):
    src = make_manifest({"melanoma": 3, "nevus": 2, "seborrheic_keratosis": 1})
    dm = build_dm(build_dr(src, lesion_plan()), seed=9)
    path = tmp_path / "manifest.csv"
    augment.save_manifest(path, dm)
    loaded = augment.load_manifest(path)
    assert loaded == dm
    header = path.read_text().splitlines()[0]
    assert header == "id,source_path,label,angle_deg,flip_axis"


def test_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError, match="header"):
        augment.load_manifest(path)
