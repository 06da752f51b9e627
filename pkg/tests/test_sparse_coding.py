import numpy as np
import pytest

from evsr.countmap import CountMap
from evsr.events import FormatError
from evsr.sparse_coding import (
    DictionaryPair,
    SparseCodeConfig,
    TrainingError,
    block_sum_downsample,
    coordinate_descent_lasso,
    load_dictionary,
    save_dictionary,
    sparse_code,
    train_dictionaries,
    upscale_count_map,
)


def random_maps(n, size=16, seed=0, density=0.4):
    rng = np.random.default_rng(seed)
    maps = []
    for _ in range(n):
        vals = rng.integers(0, 12, (size, size)).astype(float)
        vals *= rng.random((size, size)) < density
        maps.append(CountMap(size, size, vals))
    return maps


@pytest.fixture(scope="module")
def small_dict():
    return train_dictionaries(random_maps(4), factor=2, n_atoms=48, seed=7)


class TestBlockSum:
    def test_preserves_mass(self):
        rng = np.random.default_rng(0)
        hr = rng.random((8, 8))
        lr = block_sum_downsample(hr, 2)
        assert lr.shape == (4, 4)
        assert lr.sum() == pytest.approx(hr.sum())
        assert lr[0, 0] == pytest.approx(hr[:2, :2].sum())

    def test_rejects_non_divisible(self):
        with pytest.raises(ValueError):
            block_sum_downsample(np.zeros((9, 8)), 2)


class TestTraining:
    def test_deterministic(self):
        maps = random_maps(3, seed=5)
        a = train_dictionaries(maps, 2, 48, seed=7)
        b = train_dictionaries(maps, 2, 48, seed=7)
        np.testing.assert_array_equal(a.lr_atoms, b.lr_atoms)
        np.testing.assert_array_equal(a.hr_atoms, b.hr_atoms)

    def test_unit_norm_columns(self, small_dict):
        norms = np.sqrt((small_dict.lr_atoms ** 2).sum(0)
                        + (small_dict.hr_atoms ** 2).sum(0))
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_all_zero_maps_fail(self):
        zeros = [CountMap(16, 16, np.zeros((16, 16)))]
        with pytest.raises(TrainingError):
            train_dictionaries(zeros, 2, 9, seed=0)

    def test_coupled_pairs_are_consistent(self, small_dict):
        # Each LR atom is the block-sum of its HR partner (both share the
        # normalization), so their sums agree.
        lr_sums = small_dict.lr_atoms.sum(axis=0)
        hr_sums = small_dict.hr_atoms.sum(axis=0)
        np.testing.assert_allclose(lr_sums, hr_sums, atol=1e-12)

    def test_paper_scale_training_set(self):
        maps = random_maps(66, size=12, seed=1)
        d = train_dictionaries(maps, 2, 64, seed=3)
        assert d.n_atoms == 64
        assert d.hr_atoms.shape == (36, 64)

    def test_too_many_atoms_rejected(self):
        with pytest.raises(ValueError, match="positions"):
            train_dictionaries(random_maps(1, size=8), 2, 100, seed=0)


class TestCoordinateDescent:
    def test_objective_monotone_random_problems(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            rows = int(rng.integers(4, 25))
            cols = int(rng.integers(4, 40))
            A = rng.normal(size=(rows, cols))
            b = rng.normal(size=rows)
            lam = float(rng.uniform(0.001, 1.0))
            _, objs = coordinate_descent_lasso(A, b, lam, 50, 1e-9)
            diffs = np.diff(objs)
            assert (diffs <= 1e-9 * np.abs(objs[0]) + 1e-12).all()

    def test_zero_input_zero_coef(self):
        A = np.random.default_rng(0).normal(size=(6, 12))
        coef, _ = coordinate_descent_lasso(A, np.zeros(6), 0.1, 50, 1e-9)
        assert not coef.any()

    def test_descends_from_zero(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(8, 20))
        b = rng.normal(size=8)
        coef, objs = coordinate_descent_lasso(A, b, 0.05, 100, 1e-10)
        at_zero = float(b @ b)
        assert objs[-1] <= at_zero


class TestSparseCode:
    def test_atom_exact_recovery(self, small_dict):
        # Code the LR piece of the strongest atom with tiny lambda: the
        # reconstruction must match the exact fit (zero residual, since a
        # single atom reproduces it) to 1e-3 relative error.
        a_lr = small_dict.lr_atoms - small_dict.lr_atoms.mean(0, keepdims=True)
        j = int(np.argmax((a_lr ** 2).sum(0)))
        d_l = small_dict.lr_atoms[:, j]
        y = d_l / np.linalg.norm(d_l)
        config = SparseCodeConfig(lam=1e-8, beta=1.0, max_iter=5000, tol=1e-14)
        coef = sparse_code(y, None, None, small_dict, config)
        assert coef.any()
        b = y - y.mean()
        rel = np.linalg.norm(a_lr @ coef - b) / np.linalg.norm(b)
        assert rel <= 1e-3
        # Independent oracle: least squares on the active atom alone fits
        # exactly; the code's residual may not exceed it (plus the L1 slack).
        ls_coef = (a_lr[:, j] @ b) / (a_lr[:, j] @ a_lr[:, j])
        ls_residual = np.linalg.norm(a_lr[:, j] * ls_coef - b)
        assert np.linalg.norm(a_lr @ coef - b) <= ls_residual + 1e-3

    def test_atom_recovery_dominant_on_incoherent_atoms(self):
        # With near-orthogonal atoms the code concentrates on the true one.
        factor = 2
        rng = np.random.default_rng(2)
        lr_cols, hr_cols = [], []
        for j in range(9):
            d_l = np.zeros(9)
            d_l[j] = rng.uniform(2.0, 5.0)
            d_h_patch = np.zeros((6, 6))
            blk = divmod(j, 3)
            d_h_patch[2 * blk[0]:2 * blk[0] + 2,
                      2 * blk[1]:2 * blk[1] + 2] = d_l[j] / 4
            norm = np.sqrt(d_l @ d_l + d_h_patch.ravel() @ d_h_patch.ravel())
            lr_cols.append(d_l / norm)
            hr_cols.append(d_h_patch.ravel() / norm)
        dic = DictionaryPair(factor, 3, np.column_stack(lr_cols),
                             np.column_stack(hr_cols))
        j = 4
        y = dic.lr_atoms[:, j] / np.linalg.norm(dic.lr_atoms[:, j])
        config = SparseCodeConfig(lam=1e-8, beta=1.0, max_iter=5000, tol=1e-14)
        coef = sparse_code(y, None, None, dic, config)
        assert np.argmax(np.abs(coef)) == j
        assert np.abs(coef[j]) > 3 * np.abs(np.delete(coef, j)).max()

    def test_zero_patch_zero_code(self, small_dict):
        coef = sparse_code(np.zeros(9), None, None, small_dict,
                           SparseCodeConfig())
        assert not coef.any()

    def test_objective_never_worse_than_zero(self, small_dict):
        rng = np.random.default_rng(3)
        config = SparseCodeConfig()
        for _ in range(20):
            y = rng.random(9) * 5
            coef = sparse_code(y, None, None, small_dict, config)
            a_lr = small_dict.lr_atoms - small_dict.lr_atoms.mean(0, keepdims=True)
            b = y - y.mean()
            f_coef = (np.linalg.norm(a_lr @ coef - b) ** 2
                      + config.lam * np.abs(coef).sum())
            assert f_coef <= float(b @ b) + 1e-12

    def test_sparsity_active(self, small_dict):
        # With the default lambda, codes of atom combinations stay sparse.
        rng = np.random.default_rng(4)
        config = SparseCodeConfig(lam=0.1)
        nnz = []
        for _ in range(40):
            picks = rng.choice(small_dict.n_atoms, 2, replace=False)
            y = (small_dict.lr_atoms[:, picks] @ rng.uniform(1, 3, 2))
            coef = sparse_code(y, None, None, small_dict, config)
            nnz.append((coef != 0).sum())
        assert np.mean(nnz) < small_dict.n_atoms / 4

    def test_rejects_non_finite(self, small_dict):
        y = np.zeros(9)
        y[0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            sparse_code(y, None, None, small_dict, SparseCodeConfig())


class TestUpscale:
    def test_zero_map_stays_zero(self, small_dict):
        out = upscale_count_map(CountMap(8, 8, np.zeros((8, 8))), small_dict,
                                SparseCodeConfig())
        assert not out.counts.any()

    def test_output_geometry(self, small_dict):
        m = CountMap(6, 5, np.ones((5, 6)))
        out = upscale_count_map(m, small_dict, SparseCodeConfig())
        assert (out.width, out.height) == (12, 10)
        assert out.polarity == m.polarity

    def test_nonnegative_and_deterministic(self, small_dict):
        rng = np.random.default_rng(9)
        m = CountMap(8, 8, rng.integers(0, 10, (8, 8)).astype(float))
        a = upscale_count_map(m, small_dict, SparseCodeConfig())
        b = upscale_count_map(m, small_dict, SparseCodeConfig())
        assert a.counts.min() >= 0
        np.testing.assert_array_equal(a.counts, b.counts)

    def test_dictionary_built_map_reconstructs(self):
        # A periodic LR map whose every patch is one atom's LR piece must
        # come back as the stitched HR pieces of that atom.
        factor = 2
        rng = np.random.default_rng(11)
        tile = rng.integers(1, 9, (2 * factor, 2 * factor)).astype(float)
        hr_full = np.tile(tile, (4, 4))[: 5 * factor, : 5 * factor]
        lr_full = block_sum_downsample(hr_full, factor)
        d_l = lr_full[0:3, 0:3].ravel()
        d_h = hr_full[0:3 * factor, 0:3 * factor].ravel()
        norm = np.sqrt(d_l @ d_l + d_h @ d_h)
        lr_cols, hr_cols = [d_l / norm], [d_h / norm]
        for _ in range(15):
            rh_patch = rng.random((3 * factor, 3 * factor))
            rl = block_sum_downsample(rh_patch, factor).ravel()
            rh = rh_patch.ravel()
            n = np.sqrt(rl @ rl + rh @ rh)
            lr_cols.append(rl / n)
            hr_cols.append(rh / n)
        dic = DictionaryPair(factor, 3, np.column_stack(lr_cols),
                             np.column_stack(hr_cols))
        config = SparseCodeConfig(lam=1e-6, beta=1.0, max_iter=2000, tol=1e-12)
        out = upscale_count_map(CountMap(5, 5, lr_full), dic, config)
        err = np.abs(out.counts - hr_full)
        assert err.max() <= 1e-2 * hr_full.max()

    def test_too_small_map_rejected(self, small_dict):
        with pytest.raises(ValueError, match="smaller"):
            upscale_count_map(CountMap(2, 2, np.zeros((2, 2))), small_dict,
                              SparseCodeConfig())


class TestDictionaryIO:
    def test_round_trip(self, small_dict):
        data = save_dictionary(small_dict)
        loaded = load_dictionary(data)
        assert loaded.factor == small_dict.factor
        np.testing.assert_array_equal(loaded.lr_atoms, small_dict.lr_atoms)
        np.testing.assert_array_equal(loaded.hr_atoms, small_dict.hr_atoms)
        assert save_dictionary(loaded) == data

    def test_bad_magic(self, small_dict):
        data = bytearray(save_dictionary(small_dict))
        data[:4] = b"NOPE"
        with pytest.raises(FormatError, match="magic"):
            load_dictionary(bytes(data))

    def test_truncation_detected(self, small_dict):
        data = save_dictionary(small_dict)
        with pytest.raises(FormatError, match="mismatch"):
            load_dictionary(data[:-8])
