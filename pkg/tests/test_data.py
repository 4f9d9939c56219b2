import numpy as np
import pytest

from fusedmtl.core import InputError
from fusedmtl.data import (
    LongitudinalTable,
    SyntheticSpec,
    apply_preprocessing,
    dataset_to_table,
    generate_synthetic,
    load_csv,
    preprocess,
    read_weights_csv,
    transform_features,
    write_table_csv,
    write_weights_csv,
)
from fusedmtl.similarity import ConstantFeatureWarning, pearson_matrix
from fusedmtl.solver import SolverOptions, solve
from fusedmtl.core import PenaltyConfig


def write_csv(path, text):
    path.write_text(text.strip() + "\n")
    return path


GOOD_CSV = """
patient_id,timepoint,f1,f2,target
A,M00,1.0,0.5,10.0
B,M00,2.0,0.4,11.0
C,M00,,0.3,12.0
A,M06,1.5,0.2,10.5
B,M06,2.5,0.1,11.5
C,M06,3.5,0.6,12.5
"""


class TestLoadCsv:
    def test_missing_cell_flagged_not_imputed(self, tmp_path):
        table = load_csv(write_csv(tmp_path / "d.csv", GOOD_CSV))
        assert np.isnan(table.features[2, 0])
        assert not np.isnan(table.features[2, 1])

    def test_duplicate_key_names_pair(self, tmp_path):
        bad = GOOD_CSV + "A,M00,9.0,9.0,9.0\n"
        with pytest.raises(InputError, match=r"\('A', 'M00'\)"):
            load_csv(write_csv(tmp_path / "d.csv", bad))

    def test_unknown_timepoint_rejected(self, tmp_path):
        bad = GOOD_CSV + "A,M99,9.0,9.0,9.0\n"
        with pytest.raises(InputError, match="M99"):
            load_csv(write_csv(tmp_path / "d.csv", bad))

    def test_non_numeric_cell_named(self, tmp_path):
        bad = GOOD_CSV.replace("2.0,0.4", "oops,0.4")
        with pytest.raises(InputError, match="oops"):
            load_csv(write_csv(tmp_path / "d.csv", bad))

    def test_header_schema_enforced(self, tmp_path):
        with pytest.raises(InputError):
            load_csv(write_csv(tmp_path / "d.csv", "id,tp,f1,target\nA,M00,1,2"))
        with pytest.raises(InputError):
            load_csv(
                write_csv(tmp_path / "d.csv", "patient_id,timepoint,f1,y\nA,M00,1,2")
            )

    def test_round_trip_is_bit_exact(self, tmp_path):
        table = load_csv(write_csv(tmp_path / "d.csv", GOOD_CSV))
        out = tmp_path / "copy.csv"
        write_table_csv(table, out)
        again = load_csv(out)
        np.testing.assert_array_equal(
            np.nan_to_num(table.features, nan=np.inf),
            np.nan_to_num(again.features, nan=np.inf),
        )
        np.testing.assert_array_equal(table.targets, again.targets)
        assert table.patient_ids == again.patient_ids
        assert table.timepoints == again.timepoints


class TestPreprocess:
    def test_impute_then_zscore_hand_example(self, tmp_path):
        csv = """
patient_id,timepoint,f1,target
A,M00,1.0,1.0
B,M00,2.0,2.0
C,M00,,3.0
A,M06,0.0,1.0
B,M06,1.0,2.0
"""
        data, params = preprocess(load_csv(write_csv(tmp_path / "d.csv", csv)))
        # (1, 2, missing) imputes 1.5, then z-scores to (-1, 1, 0) with sd 0.5
        np.testing.assert_allclose(data.tasks[0].design[:, 0], [-1.0, 1.0, 0.0], atol=1e-15)
        assert params.impute_means[0, 0] == 1.5
        assert params.scale_stds[0, 0] == pytest.approx(0.5)

    def test_target_missing_rows_dropped_per_task(self, tmp_path):
        csv = """
patient_id,timepoint,f1,target
A,M00,1.0,1.0
B,M00,2.0,
C,M00,3.0,3.0
A,M06,0.0,1.0
B,M06,1.0,2.0
"""
        data, _ = preprocess(load_csv(write_csv(tmp_path / "d.csv", csv)))
        assert data.tasks[0].patient_ids == ("A", "C")
        assert data.tasks[1].patient_ids == ("A", "B")

    def test_standardization_idempotent(self, rng):
        spec = SyntheticSpec(n_patients=30, n_features=4, n_timepoints=2, seed=3)
        data, _ = generate_synthetic(spec)
        table = dataset_to_table(data)
        first, params1 = preprocess(table)
        second, _ = preprocess(dataset_to_table(first))
        for t1, t2 in zip(first.tasks, second.tasks):
            np.testing.assert_allclose(t1.design, t2.design, atol=1e-12)

    def test_columns_standardized(self, tmp_path, rng):
        spec = SyntheticSpec(n_patients=25, n_features=3, n_timepoints=2, seed=9)
        data, _ = generate_synthetic(spec)
        processed, _ = preprocess(dataset_to_table(data))
        for task in processed.tasks:
            np.testing.assert_allclose(task.design.mean(axis=0), 0.0, atol=1e-10)
            np.testing.assert_allclose(task.design.std(axis=0, ddof=1), 1.0, atol=1e-10)

    def test_constant_feature_left_at_zero_with_warning(self, tmp_path):
        csv = """
patient_id,timepoint,f1,f2,target
A,M00,7.0,1.0,1.0
B,M00,7.0,2.0,2.0
A,M06,0.0,0.0,1.0
B,M06,1.0,1.0,2.0
"""
        with pytest.warns(ConstantFeatureWarning):
            data, params = preprocess(load_csv(write_csv(tmp_path / "d.csv", csv)))
        np.testing.assert_array_equal(data.tasks[0].design[:, 0], [0.0, 0.0])
        assert params.scale_stds[0, 0] == 0.0

    def test_all_targets_missing_at_timepoint_rejected(self, tmp_path):
        csv = """
patient_id,timepoint,f1,target
A,M00,1.0,
B,M00,2.0,
A,M06,0.0,1.0
B,M06,1.0,2.0
"""
        with pytest.raises(InputError, match="M00"):
            preprocess(load_csv(write_csv(tmp_path / "d.csv", csv)))

    def test_test_transform_reuses_train_parameters(self, tmp_path):
        train_csv = """
patient_id,timepoint,f1,target
A,M00,1.0,1.0
B,M00,3.0,2.0
A,M06,0.0,1.0
B,M06,2.0,2.0
"""
        test_csv = """
patient_id,timepoint,f1,target
X,M00,5.0,0.0
Y,M00,,0.0
X,M06,4.0,0.0
Y,M06,6.0,0.0
"""
        _, params = preprocess(load_csv(write_csv(tmp_path / "train.csv", train_csv)))
        test = apply_preprocessing(
            load_csv(write_csv(tmp_path / "test.csv", test_csv)), params
        )
        # train M00: mean 2, sd sqrt(2); test value 5 -> (5-2)/sqrt(2)
        assert test.tasks[0].design[0, 0] == pytest.approx(3.0 / np.sqrt(2.0))
        # missing test cell imputes the TRAIN mean, landing at z = 0
        assert test.tasks[0].design[1, 0] == pytest.approx(0.0)

    def test_transform_features_keeps_targetless_rows(self, tmp_path):
        csv = """
patient_id,timepoint,f1,target
A,M00,1.0,1.0
B,M00,3.0,2.0
A,M06,0.0,1.0
B,M06,2.0,2.0
"""
        table = load_csv(write_csv(tmp_path / "train.csv", csv))
        _, params = preprocess(table)
        test_csv = """
patient_id,timepoint,f1,target
X,M00,5.0,
X,M06,4.0,
"""
        test_table = load_csv(write_csv(tmp_path / "test.csv", test_csv))
        blocks = transform_features(test_table, params)
        assert [b[0] for b in blocks] == ["M00", "M06"]
        assert blocks[0][1] == ("X",)

    def test_feature_name_mismatch_rejected(self, tmp_path):
        _, params = preprocess(load_csv(write_csv(tmp_path / "a.csv", GOOD_CSV)))
        other = GOOD_CSV.replace("f1,f2", "g1,g2")
        table = load_csv(write_csv(tmp_path / "b.csv", other))
        with pytest.raises(InputError, match="feature names"):
            apply_preprocessing(table, params)


class TestSynthetic:
    def test_seed_reproducibility_bit_exact(self):
        spec = SyntheticSpec(n_patients=20, n_features=5, n_timepoints=3, seed=11)
        d1, w1 = generate_synthetic(spec)
        d2, w2 = generate_synthetic(spec)
        np.testing.assert_array_equal(w1, w2)
        for t1, t2 in zip(d1.tasks, d2.tasks):
            np.testing.assert_array_equal(t1.design, t2.design)
            np.testing.assert_array_equal(t1.target, t2.target)
            assert t1.patient_ids == t2.patient_ids

    def test_dropout_arithmetic(self):
        spec = SyntheticSpec(
            n_patients=100, n_features=3, n_timepoints=2,
            dropout_schedule=(1.0, 0.5), seed=0,
        )
        data, _ = generate_synthetic(spec)
        assert list(data.patient_counts) == [100, 50]
        assert spec.n_per_task == (100, 50)

    def test_dropout_is_patient_level(self):
        spec = SyntheticSpec(
            n_patients=40, n_features=3, n_timepoints=3,
            dropout_schedule=(1.0, 0.6, 0.4), seed=5,
        )
        data, _ = generate_synthetic(spec)
        base = set(data.tasks[0].patient_ids)
        for task in data.tasks[1:]:
            assert set(task.patient_ids) <= base

    def test_block_correlation_structure(self):
        spec = SyntheticSpec(
            n_patients=1000, n_features=6, n_timepoints=2,
            correlation_blocks=((0, 1, 2),), block_rho=0.8, seed=2,
        )
        data, _ = generate_synthetic(spec)
        R = pearson_matrix(data.tasks[0].design)
        within = [R[0, 1], R[0, 2], R[1, 2]]
        across = [R[0, 3], R[1, 4], R[2, 5]]
        assert min(within) > 0.7
        assert max(np.abs(across)) < 0.15
        assert min(within) > max(np.abs(across))

    def test_noiseless_interpolation_recovers_weights(self):
        spec = SyntheticSpec(
            n_patients=60, n_features=5, n_timepoints=3, noise_sigma=0.0,
            n_signal_features=3, seed=21,
        )
        data, true_W = generate_synthetic(spec)
        res = solve(
            data, None, PenaltyConfig(0.0, 0.0, 0.0),
            SolverOptions(max_iterations=50000, eps_abs=1e-12, eps_rel=1e-10),
        )
        np.testing.assert_allclose(res.weights.values, true_W, atol=1e-6)

    def test_temporal_drift_is_smooth(self):
        spec = SyntheticSpec(
            n_patients=20, n_features=6, n_timepoints=5,
            n_signal_features=3, temporal_drift=0.05, signal_scale=1.0, seed=4,
        )
        _, true_W = generate_synthetic(spec)
        diffs = np.abs(np.diff(true_W, axis=1))
        assert diffs.max() < 0.3
        # noise features stay exactly zero at every timepoint
        np.testing.assert_array_equal(true_W[3:], np.zeros((3, 5)))

    def test_explicit_true_weights_used(self):
        W = np.arange(6, dtype=float).reshape(3, 2)
        spec = SyntheticSpec(
            n_patients=10, n_features=3, n_timepoints=2, true_weights=W, seed=1
        )
        _, got = generate_synthetic(spec)
        np.testing.assert_array_equal(got, W)

    def test_spec_validation(self):
        with pytest.raises(InputError):
            SyntheticSpec(n_patients=10, n_features=3, n_timepoints=2,
                          dropout_schedule=(1.0, 1.2))
        with pytest.raises(InputError):
            SyntheticSpec(n_patients=10, n_features=3, n_timepoints=2,
                          correlation_blocks=((0, 1), (1, 2)))
        with pytest.raises(InputError):
            SyntheticSpec(n_patients=10, n_features=3, n_timepoints=2,
                          noise_sigma=-0.1)


class TestWeightsCsv:
    def test_round_trip(self, tmp_path):
        W = np.array([[1.25, -0.5], [0.0, 3.75], [2.0, 0.125]])
        path = tmp_path / "w.csv"
        write_weights_csv(path, W, ("a", "b", "c"), ("M00", "M06"))
        got, names, labels = read_weights_csv(path)
        np.testing.assert_array_equal(got, W)
        assert names == ("a", "b", "c")
        assert labels == ("M00", "M06")
