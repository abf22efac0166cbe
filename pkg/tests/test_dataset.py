import numpy as np
import pytest

from kat import dataset as ds
from kat.errors import (
    BoundaryOutOfRange,
    DimensionMismatch,
    EmptyFile,
    MissingColumn,
    NonNumericCell,
    OriginViolation,
)


def make(features, targets, n_hist=None):
    features = np.atleast_2d(np.asarray(features, float))
    targets = np.atleast_2d(np.asarray(targets, float))
    if n_hist is None:
        n_hist = len(features)
    return ds.Dataset(features, targets, n_hist)


def test_load_csv_basic(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,y\n1,2,3\n4,5,6\n7,8,9\n", encoding="utf-8")
    data = ds.load_csv(p, ["y"])
    assert len(data) == 3
    assert data.n_historical == 3
    assert data.feature_names == ("a", "b")
    assert np.allclose(data.features, [[1, 2], [4, 5], [7, 8]])
    assert np.allclose(data.targets, [[3], [6], [9]])


def test_load_csv_header_only(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,y\n", encoding="utf-8")
    with pytest.raises(EmptyFile):
        ds.load_csv(p, ["y"])


def test_load_csv_empty_file(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("", encoding="utf-8")
    with pytest.raises(EmptyFile):
        ds.load_csv(p, ["y"])


def test_load_csv_missing_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,2\n", encoding="utf-8")
    with pytest.raises(MissingColumn):
        ds.load_csv(p, ["y"])


def test_load_csv_non_numeric_reports_position(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,y\n1,2\nx,4\n", encoding="utf-8")
    with pytest.raises(NonNumericCell) as exc:
        ds.load_csv(p, ["y"])
    assert exc.value.row == 1
    assert exc.value.column == "a"


def test_csv_round_trip_full_precision(tmp_path):
    rng = np.random.default_rng(7)
    data = make(rng.standard_normal((20, 4)) * 1e3, rng.standard_normal((20, 2)) / 1e3)
    p = tmp_path / "rt.csv"
    ds.save_csv(data, p)
    back = ds.load_csv(p, list(data.target_names))
    assert np.array_equal(back.features, data.features)
    assert np.array_equal(back.targets, data.targets)


def test_load_csv_deterministic(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,y\n1.5,2.25\n-3.125,4\n", encoding="utf-8")
    d1 = ds.load_csv(p, ["y"])
    d2 = ds.load_csv(p, ["y"])
    assert np.array_equal(d1.features, d2.features)
    assert np.array_equal(d1.targets, d2.targets)


def test_split_time_counts():
    data = make(np.arange(20).reshape(10, 2), np.arange(10).reshape(10, 1))
    train, test = ds.split_time(data, 7)
    assert (len(train), len(test)) == (7, 3)
    assert train.n_historical == 7 and test.n_historical == 3


def test_split_time_case1_default_size():
    data = make(np.zeros((730, 3)), np.zeros((730, 1)))
    train, test = ds.split_time(data, 546)
    assert len(train) == 546


def test_split_time_boundary_errors():
    data = make(np.zeros((5, 2)), np.zeros((5, 1)))
    for bad in (0, 5, -1, 7):
        with pytest.raises(BoundaryOutOfRange):
            ds.split_time(data, bad)


def test_split_then_concat_reproduces_sequence():
    rng = np.random.default_rng(3)
    data = make(rng.standard_normal((12, 3)), rng.standard_normal((12, 2)))
    train, test = ds.split_time(data, 5)
    cat_f = np.vstack([train.features, test.features])
    cat_t = np.vstack([train.targets, test.targets])
    assert np.array_equal(cat_f, data.features)
    assert np.array_equal(cat_t, data.targets)


def test_merge_sizes():
    hd = make(np.zeros((546, 24)), np.zeros((546, 24)))
    sd = ds.Dataset(np.zeros((1500, 24)), np.zeros((1500, 24)), 0)
    merged = ds.merge(hd, sd)
    assert len(merged) == 2046
    assert merged.n_historical == 546
    assert merged.n_synthetic == 1500


def test_merge_empty_sd_is_identity():
    hd = make(np.ones((4, 2)), np.ones((4, 1)))
    out = ds.merge(hd, ds.Dataset(np.zeros((0, 2)), np.zeros((0, 1)), 0))
    assert out is hd


def test_merge_dimension_mismatch():
    hd = make(np.ones((4, 2)), np.ones((4, 1)))
    sd = ds.Dataset(np.ones((2, 3)), np.ones((2, 1)), 0)
    with pytest.raises(DimensionMismatch):
        ds.merge(hd, sd)


def test_merge_origin_violation():
    hd = make(np.ones((4, 2)), np.ones((4, 1)))
    not_synth = make(np.ones((2, 2)), np.ones((2, 1)))  # all historical
    with pytest.raises(OriginViolation):
        ds.merge(hd, not_synth)


def test_merge_multiset_union():
    rng = np.random.default_rng(5)
    hd = make(rng.standard_normal((6, 2)), rng.standard_normal((6, 1)))
    sd = ds.Dataset(rng.standard_normal((4, 2)), rng.standard_normal((4, 1)), 0)
    merged = ds.merge(hd, sd)
    assert len(merged) == len(hd) + len(sd)
    assert np.array_equal(merged.features[:6], hd.features)
    assert np.array_equal(merged.features[6:], sd.features)


def test_from_samples_origin_order_enforced():
    s_h = ds.Sample([1.0], [2.0], ds.Origin.HISTORICAL)
    s_s = ds.Sample([1.0], [2.0], ds.Origin.SYNTHETIC)
    data = ds.Dataset.from_samples([s_h, s_s])
    assert data.n_historical == 1 and data.n_synthetic == 1
    with pytest.raises(OriginViolation):
        ds.Dataset.from_samples([s_s, s_h])


def test_sample_rejects_non_finite():
    with pytest.raises(DimensionMismatch):
        ds.Sample([np.nan], [1.0], ds.Origin.HISTORICAL)


def test_normalization_fits_on_historical_only():
    feats = np.vstack([np.full((5, 2), 2.0), np.full((5, 2), 100.0)])
    data = ds.Dataset(feats, np.zeros((10, 1)), n_historical=5)
    stats = ds.NormStats.fit(data)
    assert np.allclose(stats.mean, [2.0, 2.0])
    # zero variance on the historical rows: unit divisor
    assert np.allclose(stats.std, [1.0, 1.0])
    out = stats.apply(data)
    assert np.allclose(out.features[:5], 0.0)
    assert np.allclose(out.features[5:], 98.0)
    # targets untouched
    assert np.array_equal(out.targets, data.targets)


def test_normalization_round_trip():
    rng = np.random.default_rng(11)
    data = make(rng.standard_normal((30, 3)) * 5 + 2, rng.standard_normal((30, 1)))
    stats = ds.NormStats.fit(data)
    z = stats.transform_features(data.features)
    assert np.allclose(stats.inverse_features(z), data.features)
    assert abs(z.mean()) < 1e-12


def test_sidecar_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    hd = make(rng.standard_normal((5, 2)), rng.standard_normal((5, 1)))
    sd = ds.Dataset(rng.standard_normal((3, 2)), rng.standard_normal((3, 1)), 0)
    merged = ds.merge(hd, sd)
    stats = ds.NormStats.fit(merged)
    csv_p, side_p = tmp_path / "d.csv", tmp_path / "d.json"
    ds.save_csv(merged, csv_p)
    ds.save_sidecar(merged, side_p, stats)
    doc = ds.load_sidecar(side_p)
    assert doc["n_historical"] == 5 and doc["n_synthetic"] == 3
    back, back_stats = ds.load_with_sidecar(csv_p, side_p, list(merged.target_names))
    assert back.n_historical == 5 and back.n_synthetic == 3
    assert np.allclose(back_stats.mean, stats.mean)


def test_dataset_immutable():
    data = make(np.ones((2, 2)), np.ones((2, 1)))
    with pytest.raises(ValueError):
        data.features[0, 0] = 9.0
