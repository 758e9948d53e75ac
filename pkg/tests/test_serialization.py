import numpy as np
import pytest

import fedsparsify as fs
from fedsparsify import serialization
from fedsparsify.serialization import (
    BadMagicError,
    ModelFileError,
    PopcountMismatchError,
    TruncatedFileError,
    VersionMismatchError,
)


SPEC = fs.ModelSpec((4,), (fs.Dense(4, 2), fs.Relu(), fs.Dense(2, 1)))


def random_case(rng, p=None, sparsity=None):
    p = int(rng.integers(1, 4000)) if p is None else p
    sparsity = float(rng.random()) if sparsity is None else sparsity
    params = rng.standard_normal(p).astype(np.float32)
    mask = fs.magnitude_mask(params, sparsity, fs.PruneMask.all_ones(p))
    return params, mask


class TestFormat:
    def test_payload_arithmetic(self, tmp_path):
        # P=8, mask 0b00000101, values [1.5, -2.0]: 1 mask byte + 8 value bytes
        path = tmp_path / "m.fspw"
        params = np.zeros(8, dtype=np.float32)
        params[0], params[2] = 1.5, -2.0
        bits = np.zeros(8, dtype=bool)
        bits[[0, 2]] = True
        fs.save_model(path, params, fs.PruneMask(bits))
        blob = path.read_bytes()
        assert len(blob) == serialization._HEADER.size + 1 + 8
        assert blob[:4] == b"FSPW"
        assert blob[serialization._HEADER.size] == 0b00000101

    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        params, mask = random_case(rng, p=300, sparsity=0.7)
        path = tmp_path / "m.fspw"
        fs.save_model(path, params, mask, spec=SPEC)
        loaded = fs.load_model(path)
        assert np.array_equal(loaded.params, fs.apply_mask(params, mask))
        assert np.array_equal(loaded.mask.bits, mask.bits)
        # saving the loaded model reproduces the same bytes
        path2 = tmp_path / "m2.fspw"
        fs.save_model(path2, loaded.params, loaded.mask, digest=loaded.digest)
        assert path.read_bytes() == path2.read_bytes()

    def test_digest_tracks_spec(self, tmp_path):
        other = fs.ModelSpec((4,), (fs.Dense(4, 3), fs.Relu(), fs.Dense(3, 1)))
        assert fs.spec_digest(SPEC) != fs.spec_digest(other)
        path = tmp_path / "m.fspw"
        params = fs.build_model(SPEC, 0)
        fs.save_model(path, params, fs.PruneMask.all_ones(len(params)), spec=SPEC)
        assert fs.load_model(path).digest == fs.spec_digest(SPEC)

    def test_sparse_file_much_smaller_than_dense(self, tmp_path):
        rng = np.random.default_rng(1)
        p = 100_000
        params = rng.standard_normal(p).astype(np.float32)
        dense_path, sparse_path = tmp_path / "dense.fspw", tmp_path / "sparse.fspw"
        fs.save_model(dense_path, params, fs.PruneMask.all_ones(p))
        mask = fs.magnitude_mask(params, 0.99, fs.PruneMask.all_ones(p))
        fs.save_model(sparse_path, params, mask)
        assert sparse_path.stat().st_size < 0.10 * dense_path.stat().st_size


class TestErrors:
    @pytest.fixture
    def saved(self, tmp_path):
        rng = np.random.default_rng(2)
        params, mask = random_case(rng, p=64, sparsity=0.5)
        path = tmp_path / "m.fspw"
        fs.save_model(path, params, mask)
        return path

    def test_bad_magic(self, saved):
        blob = bytearray(saved.read_bytes())
        blob[:4] = b"NOPE"
        saved.write_bytes(blob)
        with pytest.raises(BadMagicError, match="bad magic"):
            fs.load_model(saved)

    def test_version_mismatch(self, saved):
        blob = bytearray(saved.read_bytes())
        blob[4] = 9
        saved.write_bytes(blob)
        with pytest.raises(VersionMismatchError, match="version"):
            fs.load_model(saved)

    def test_truncated_header(self, saved):
        saved.write_bytes(saved.read_bytes()[:10])
        with pytest.raises(TruncatedFileError):
            fs.load_model(saved)

    def test_truncated_mask(self, saved):
        saved.write_bytes(saved.read_bytes()[: serialization._HEADER.size + 2])
        with pytest.raises(TruncatedFileError, match="mask"):
            fs.load_model(saved)

    def test_truncated_values(self, saved):
        saved.write_bytes(saved.read_bytes()[:-3])
        with pytest.raises(TruncatedFileError, match="values"):
            fs.load_model(saved)

    def test_popcount_mismatch(self, saved):
        blob = bytearray(saved.read_bytes())
        offset = serialization._HEADER.size
        # force a popcount change without touching the header
        blob[offset] = 0x00 if blob[offset] else 0xFF
        saved.write_bytes(blob)
        with pytest.raises(PopcountMismatchError, match="popcount"):
            fs.load_model(saved)

    def test_trailing_bytes(self, saved):
        saved.write_bytes(saved.read_bytes() + b"junk")
        with pytest.raises(ModelFileError, match="trailing"):
            fs.load_model(saved)


class TestRandomizedRoundTrips:
    def test_twenty_cases_with_edges(self, tmp_path):
        rng = np.random.default_rng(3)
        cases = [random_case(rng) for _ in range(18)]
        p = 37
        zero_params = rng.standard_normal(p).astype(np.float32)
        cases.append((zero_params, fs.PruneMask(np.zeros(p, dtype=bool))))  # 0 nonzero
        cases.append((zero_params, fs.PruneMask.all_ones(p)))  # fully dense
        for i, (params, mask) in enumerate(cases):
            path = tmp_path / f"case{i}.fspw"
            fs.save_model(path, params, mask)
            loaded = fs.load_model(path)
            assert np.array_equal(loaded.params, fs.apply_mask(params, mask))
            assert np.array_equal(loaded.mask.bits, mask.bits)
            assert loaded.param_count == len(params)
