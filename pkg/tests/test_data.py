import gzip
import os
import struct

import numpy as np
import pytest
from scipy import integrate

from ibgen.data import (
    Component,
    Dataset,
    SyntheticSource,
    SyntheticSpec,
    benchmark_spec,
    load_cifar10_bin,
    load_mnist_idx,
    make_synthetic,
    nearest_mean_accuracy,
    parse_idx,
    subsample,
    subsample_split,
    uniform_halves_spec,
)
from ibgen.errors import (
    BadMagicError,
    CountMismatchError,
    DataFormatError,
    DomainError,
    RecordLengthError,
    TruncatedFileError,
)
from ibgen.nn import Rng

from conftest import CIFAR_DIR, MNIST_DIR, golden_cifar_bytes, golden_images, write_golden_mnist


class TestIdx:
    def test_golden_roundtrip(self, tmp_path):
        img, lab = write_golden_mnist(tmp_path, n=3)
        ds = load_mnist_idx(img, lab)
        assert ds.n == 3 and ds.d_x == 784 and ds.n_classes == 10
        np.testing.assert_array_equal(ds.y, [0, 1, 2])
        np.testing.assert_array_equal(ds.X * 255.0, golden_images(3).reshape(3, -1).astype(float))

    def test_header_bytes(self, tmp_path):
        img, _ = write_golden_mnist(tmp_path, n=2)
        raw = open(img, "rb").read()
        assert raw[:4] == bytes([0, 0, 8, 3])
        assert struct.unpack(">3I", raw[4:16]) == (2, 28, 28)

    def test_pixel_255_is_one(self, tmp_path):
        from ibgen.data import write_idx

        img = np.zeros((1, 28, 28), dtype=np.uint8)
        img[0, 0, 0] = 255
        write_idx(tmp_path / "i", img)
        write_idx(tmp_path / "l", np.array([4], dtype=np.uint8))
        ds = load_mnist_idx(tmp_path / "i", tmp_path / "l")
        assert ds.X[0, 0] == 1.0 and ds.X[0, 1] == 0.0

    def test_gzip(self, tmp_path):
        img, lab = write_golden_mnist(tmp_path, n=2)
        for p in (img, lab):
            with open(p, "rb") as fh, gzip.open(p + ".gz", "wb") as gz:
                gz.write(fh.read())
        ds = load_mnist_idx(img + ".gz", lab + ".gz")
        assert ds.n == 2

    def test_bad_magic(self, tmp_path):
        img, lab = write_golden_mnist(tmp_path, n=2)
        with pytest.raises(BadMagicError):
            load_mnist_idx(lab, img)

    def test_truncated_body(self, tmp_path):
        img, lab = write_golden_mnist(tmp_path, n=2)
        raw = open(img, "rb").read()
        open(img, "wb").write(raw[:-5])
        with pytest.raises(TruncatedFileError):
            load_mnist_idx(img, lab)

    def test_truncated_header(self):
        with pytest.raises(TruncatedFileError):
            parse_idx(bytes([0, 0, 8, 3, 0, 0]), 0x803, "images")
        with pytest.raises(TruncatedFileError):
            parse_idx(b"\x00\x00", 0x803, "images")

    def test_trailing_bytes(self):
        with pytest.raises(DataFormatError):
            parse_idx(bytes([0, 0, 8, 1, 0, 0, 0, 1, 5, 6]), 0x801, "labels")

    def test_count_mismatch(self, tmp_path):
        from ibgen.data import write_idx

        write_idx(tmp_path / "i", golden_images(9))
        write_idx(tmp_path / "l", np.arange(10, dtype=np.uint8))
        with pytest.raises(CountMismatchError):
            load_mnist_idx(tmp_path / "i", tmp_path / "l")

    @pytest.mark.skipif(not os.path.exists(os.path.join(MNIST_DIR, "train-images-idx3-ubyte")), reason="MNIST files not available")
    def test_official_files(self):
        raw = open(os.path.join(MNIST_DIR, "train-images-idx3-ubyte"), "rb").read(16)
        assert raw[:4] == bytes([0, 0, 8, 3])
        assert struct.unpack(">3I", raw[4:16]) == (60000, 28, 28)
        ds = load_mnist_idx(os.path.join(MNIST_DIR, "train-images-idx3-ubyte"), os.path.join(MNIST_DIR, "train-labels-idx1-ubyte"))
        assert ds.n == 60000 and ds.d_x == 784
        np.testing.assert_array_equal(np.bincount(ds.y), [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949])


class TestCifar:
    def test_single_record(self, tmp_path):
        (tmp_path / "b.bin").write_bytes(golden_cifar_bytes([7]))
        ds = load_cifar10_bin(tmp_path / "b.bin")
        assert ds.n == 1 and ds.d_x == 3072 and ds.y[0] == 7
        np.testing.assert_allclose(ds.X[0, :3], np.array([0, 1, 2]) / 255.0)

    def test_ten_records_two_files(self, tmp_path):
        (tmp_path / "a.bin").write_bytes(golden_cifar_bytes(range(10)))
        (tmp_path / "b.bin").write_bytes(golden_cifar_bytes([3, 4]))
        ds = load_cifar10_bin([tmp_path / "a.bin", tmp_path / "b.bin"])
        assert ds.n == 12
        np.testing.assert_array_equal(ds.y, list(range(10)) + [3, 4])

    def test_bad_length(self, tmp_path):
        (tmp_path / "b.bin").write_bytes(golden_cifar_bytes([1, 2])[:-1])
        with pytest.raises(RecordLengthError):
            load_cifar10_bin(tmp_path / "b.bin")

    def test_bad_label(self, tmp_path):
        (tmp_path / "b.bin").write_bytes(golden_cifar_bytes([12]))
        with pytest.raises(DataFormatError):
            load_cifar10_bin(tmp_path / "b.bin")

    @pytest.mark.skipif(not os.path.exists(os.path.join(CIFAR_DIR, "data_batch_1.bin")), reason="CIFAR-10 files not available")
    def test_official_batch(self):
        assert load_cifar10_bin(os.path.join(CIFAR_DIR, "data_batch_1.bin")).n == 10000


class TestDataset:
    def test_validation(self):
        with pytest.raises(DataFormatError):
            Dataset(np.array([[1.5]]), np.array([0]), 2)
        with pytest.raises(DataFormatError):
            Dataset(np.array([[0.5]]), np.array([2]), 2)
        with pytest.raises(CountMismatchError):
            Dataset(np.zeros((2, 1)), np.array([0]), 2)


class TestSubsample:
    def _ds(self, n=60000):
        return Dataset(np.zeros((n, 1)), np.zeros(n, dtype=int), 1, "idx")

    def test_full_size_is_permutation(self):
        X = np.linspace(0, 1, 50)[:, None]
        ds = Dataset(X, np.zeros(50, dtype=int), 1)
        sub = subsample(ds, 50, 3)
        np.testing.assert_array_equal(np.sort(sub.X[:, 0]), X[:, 0])

    def test_seeded(self):
        X = np.linspace(0, 1, 100)[:, None]
        ds = Dataset(X, np.zeros(100, dtype=int), 1)
        np.testing.assert_array_equal(subsample(ds, 10, 4).X, subsample(ds, 10, 4).X)

    def test_overlap_hypergeometric(self):
        n, k = 60000, 5000
        ds = Dataset(np.arange(n)[:, None] / n, np.zeros(n, dtype=int), 1)
        a = set(subsample(ds, k, 1).X[:, 0])
        b = set(subsample(ds, k, 2).X[:, 0])
        overlap = len(a & b)
        mean = k * k / n
        var = k * (k / n) * (1 - k / n) * (n - k) / (n - 1)
        assert abs(overlap - mean) < 4 * np.sqrt(var)

    def test_disjoint_split(self):
        n = 1000
        ds = Dataset(np.arange(n)[:, None] / n, np.zeros(n, dtype=int), 1)
        tr, te = subsample_split(ds, 300, 400, 0)
        assert len(set(tr.X[:, 0]) & set(te.X[:, 0])) == 0
        assert tr.n == 300 and te.n == 400

    def test_too_large(self):
        ds = Dataset(np.zeros((5, 1)), np.zeros(5, dtype=int), 1)
        with pytest.raises(DomainError):
            subsample(ds, 6, 0)
        with pytest.raises(DomainError):
            subsample_split(ds, 3, 3, 0)


class TestSynthetic:
    def test_single_component(self):
        spec = SyntheticSpec([Component(0, 1.0, "gaussian", mean=(0.5, 0.5), var=(0.01, 0.01))], n_classes=1)
        ds, _ = make_synthetic(spec, 200, 0)
        assert np.all(ds.y == 0)
        assert np.all((ds.X >= 0) & (ds.X <= 1))

    def test_well_separated_nearest_mean(self):
        ds, _ = make_synthetic(benchmark_spec(separation=0.6, var=0.003), 2000, 0)
        assert nearest_mean_accuracy(ds) >= 0.99

    def test_class_balance(self):
        ds, src = make_synthetic(benchmark_spec(), 20000, 1)
        np.testing.assert_allclose(ds.class_frequencies(), src.class_priors(), atol=4 * np.sqrt(0.25 / 20000))

    def test_cell_probs_sum_to_one(self):
        from ibgen.bound import build_partition

        for spec in (benchmark_spec(), uniform_halves_spec(3)):
            src = SyntheticSource(spec)
            for m in (1, 3, 7):
                part = build_partition(src, m)
                lo, hi = part.cell_bounds()
                np.testing.assert_allclose(src.cell_probs(lo, hi).sum(), 1.0, atol=1e-9)

    def test_cell_probs_match_density_integral(self):
        src = SyntheticSource(benchmark_spec())
        lo, hi = np.array([0.1, 0.2]), np.array([0.45, 0.6])
        exact = src.cell_probs(lo, hi)
        for y in range(2):
            val, _ = integrate.dblquad(lambda b, a: src.density(np.array([a, b]))[y], lo[0], hi[0], lo[1], hi[1], epsabs=1e-12, epsrel=1e-11)
            np.testing.assert_allclose(exact[y], val, atol=1e-10)

    def test_empirical_cell_masses_match_exact(self):
        from ibgen.bound import build_partition, discretize_source

        ds, src = make_synthetic(benchmark_spec(), 20000, 2)
        part = build_partition(src, 4)
        emp = discretize_source(ds, part).masses
        exact = discretize_source(src, part).masses
        sigma = np.sqrt(exact * (1 - exact) / ds.n)
        assert np.all(np.abs(emp - exact) <= 3 * sigma + 1e-12 + 3.0 / ds.n)

    def test_density_integrates_to_one(self):
        src = SyntheticSource(benchmark_spec())
        val, _ = integrate.dblquad(lambda b, a: src.density(np.array([a, b])).sum(), 0, 1, 0, 1, epsabs=1e-10)
        np.testing.assert_allclose(val, 1.0, atol=1e-8)

    def test_degenerate_covariance(self):
        with pytest.raises(DomainError):
            SyntheticSource(SyntheticSpec([Component(0, 1.0, "gaussian", mean=(0.5,), var=(0.0,))], n_classes=1))

    def test_dimension_limit(self):
        with pytest.raises(DomainError):
            SyntheticSource(uniform_halves_spec(4))

    def test_same_seed_same_sample(self):
        a, _ = make_synthetic(benchmark_spec(), 100, 5)
        b, _ = make_synthetic(benchmark_spec(), 100, 5)
        np.testing.assert_array_equal(a.X, b.X)
