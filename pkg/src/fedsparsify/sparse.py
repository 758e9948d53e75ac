"""Compressed-sparse-row inference for pruned models, plus the timed
throughput benchmark.

Dense and conv layers are lowered to CSR weight matrices holding only the
mask-kept entries; the remaining layer types are cheap elementwise ops and
stay dense. Sparse forward matches dense forward on masked parameters to
within float summation order (<= 1e-5 absolute).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _kernels, nn
from ._kernels.numpy_backend import _im2col
from .sparsify import PruneMask, apply_mask


class MemoryBudgetError(RuntimeError):
    """Model working set exceeds the benchmark memory budget."""


@dataclass
class CsrMatrix:
    n_rows: int
    n_cols: int
    indptr: np.ndarray  # (n_rows + 1,) int64, non-decreasing
    indices: np.ndarray  # (nnz,) int64, strictly increasing within a row
    data: np.ndarray  # (nnz,) float

    def __post_init__(self):
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.data = np.ascontiguousarray(self.data)
        if self.indptr.shape != (self.n_rows + 1,):
            raise ValueError(f"indptr must have {self.n_rows + 1} entries")
        if self.indptr[0] != 0 or self.indptr[-1] != len(self.data):
            raise ValueError("indptr must start at 0 and end at nnz")
        if np.any(np.diff(self.indptr) < 0):
            raise ValueError("indptr must be non-decreasing")
        if len(self.indices) != len(self.data):
            raise ValueError("indices and data lengths differ")
        if len(self.indices) and (
            self.indices.min() < 0 or self.indices.max() >= self.n_cols
        ):
            raise ValueError("column indices out of bounds")
        if len(self.indices) > 1:
            new_row = np.zeros(len(self.indices), dtype=bool)
            starts = self.indptr[:-1]
            new_row[starts[starts < len(self.indices)]] = True
            bad = (np.diff(self.indices) <= 0) & ~new_row[1:]
            if bad.any():
                raise ValueError("columns not strictly increasing within a row")

    @property
    def nnz(self) -> int:
        return len(self.data)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return _kernels.csr_matvec(self.indptr, self.indices, self.data, x)

    def matmul(self, dense: np.ndarray) -> np.ndarray:
        return _kernels.csr_matmul(self.indptr, self.indices, self.data, dense)


def to_sparse(weights: np.ndarray, mask: np.ndarray) -> CsrMatrix:
    """CSR matrix holding exactly the mask-kept entries of a 2-D weight array."""
    weights = np.asarray(weights)
    mask = np.asarray(mask, dtype=bool)
    if weights.ndim != 2 or weights.shape != mask.shape:
        raise ValueError(
            f"need matching 2-D weight/mask shapes, got {weights.shape} and {mask.shape}"
        )
    rows, cols = np.nonzero(mask)
    counts = np.bincount(rows, minlength=weights.shape[0])
    indptr = np.zeros(weights.shape[0] + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return CsrMatrix(weights.shape[0], weights.shape[1], indptr, cols, weights[rows, cols])


def to_dense(csr: CsrMatrix) -> np.ndarray:
    out = np.zeros((csr.n_rows, csr.n_cols), dtype=csr.data.dtype)
    rows = np.repeat(np.arange(csr.n_rows), np.diff(csr.indptr))
    out[rows, csr.indices] = csr.data
    return out


class SparseModel:
    """A pruned model lowered for sparse inference.

    Dense layers become CSR matvecs; convolutions run as CSR products
    against im2col patch matrices of their (zero-padded) inputs.
    """

    def __init__(
        self,
        spec: nn.ModelSpec,
        params: np.ndarray,
        mask: PruneMask,
        max_bytes: int = 2**31,
    ):
        masked = apply_mask(params, mask)
        views = nn.unflatten(masked, spec)
        kept = nn.unflatten(mask.bits.astype(np.float32), spec)
        shapes = nn._layout(spec).shapes
        self.spec = spec
        self._rank = max(len(spec.input_shape) - 1, 1)
        self._ops: list[tuple] = []
        working = 2 * masked.nbytes
        for i, layer in enumerate(spec.layers):
            if isinstance(layer, (nn.Dense, nn.Conv)):
                w = views[(i, "weight")]
                bits = kept[(i, "weight")] > 0
                csr = to_sparse(w.reshape(w.shape[0], -1), bits.reshape(w.shape[0], -1))
                bias = views[(i, "bias")].copy()
                if isinstance(layer, nn.Dense):
                    self._ops.append(("dense", csr, bias))
                else:
                    kernel = w.shape[2:]
                    spatial_out = int(np.prod(shapes[i][1:]))
                    working += 4 * csr.n_cols * spatial_out  # im2col patch buffer
                    self._ops.append(("conv", csr, bias, kernel))
            elif isinstance(layer, nn.InstanceNorm):
                self._ops.append(
                    ("instance_norm", views[(i, "gamma")].copy(), views[(i, "beta")].copy())
                )
            elif isinstance(layer, nn.MaxPool):
                self._ops.append(("max_pool", nn._lift(layer.window, self._rank, "window")))
            elif isinstance(layer, nn.AvgPool):
                self._ops.append(("avg_pool",))
            else:
                self._ops.append(("relu",))
        if working > max_bytes:
            raise MemoryBudgetError(
                f"estimated working set {working} bytes exceeds budget {max_bytes}"
            )

    def forward(self, inputs: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(np.asarray(inputs, dtype=np.float32))
        n = x.shape[0]
        x = x.reshape((n,) + nn._canonical_input(self.spec.input_shape))
        for op in self._ops:
            kind = op[0]
            if kind == "dense":
                _, csr, bias = op
                xf = x.reshape(n, -1)
                if n == 1:
                    x = csr.matvec(xf[0])[None, :] + bias
                else:
                    x = csr.matmul(xf.T).T + bias
            elif kind == "conv":
                _, csr, bias, kernel = op
                xp = nn._pad_same(x, kernel)
                kd, kh, kw = kernel
                od = xp.shape[2] - kd + 1
                oh = xp.shape[3] - kh + 1
                ow = xp.shape[4] - kw + 1
                outs = []
                for s in range(n):
                    cols = _im2col(xp[s : s + 1], kd, kh, kw)[0]
                    outs.append(csr.matmul(cols) + bias[:, None])
                x = np.stack(outs).reshape(n, csr.n_rows, od, oh, ow)
            elif kind == "instance_norm":
                _, gamma, beta = op
                mu = x.mean(axis=(2, 3, 4), keepdims=True)
                var = x.var(axis=(2, 3, 4), keepdims=True)
                xhat = (x - mu) / np.sqrt(var + nn.INSTANCE_NORM_EPS)
                x = gamma.reshape(1, -1, 1, 1, 1) * xhat + beta.reshape(1, -1, 1, 1, 1)
            elif kind == "max_pool":
                x, _ = _kernels.maxpool3d_forward(x, op[1])
            elif kind == "avg_pool":
                x = x.mean(axis=(2, 3, 4), keepdims=True)
            else:
                x = np.maximum(x, 0)
        return x.reshape(n)


def sparse_forward(model: SparseModel, batch: nn.Batch) -> np.ndarray:
    """Predictions from the lowered model; matches dense forward on the
    masked parameters within 1e-5."""
    return model.forward(batch.inputs)


class DenseRunner:
    """Dense twin of SparseModel: identical op pipeline, dense kernels.

    Benchmarking against this isolates the storage-format cost: the two
    variants differ only in how the weight products are computed.
    """

    def __init__(self, spec: nn.ModelSpec, params: np.ndarray, mask: PruneMask):
        masked = apply_mask(params, mask)
        views = nn.unflatten(masked, spec)
        self.spec = spec
        rank = max(len(spec.input_shape) - 1, 1)
        self._ops: list[tuple] = []
        for i, layer in enumerate(spec.layers):
            if isinstance(layer, nn.Dense):
                self._ops.append(("dense", views[(i, "weight")].copy(), views[(i, "bias")].copy()))
            elif isinstance(layer, nn.Conv):
                self._ops.append(("conv", views[(i, "weight")].copy(), views[(i, "bias")].copy()))
            elif isinstance(layer, nn.InstanceNorm):
                self._ops.append(
                    ("instance_norm", views[(i, "gamma")].copy(), views[(i, "beta")].copy())
                )
            elif isinstance(layer, nn.MaxPool):
                self._ops.append(("max_pool", nn._lift(layer.window, rank, "window")))
            elif isinstance(layer, nn.AvgPool):
                self._ops.append(("avg_pool",))
            else:
                self._ops.append(("relu",))

    def forward(self, inputs: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(np.asarray(inputs, dtype=np.float32))
        n = x.shape[0]
        x = x.reshape((n,) + nn._canonical_input(self.spec.input_shape))
        for op in self._ops:
            kind = op[0]
            if kind == "dense":
                _, w, bias = op
                x = x.reshape(n, -1) @ w.T + bias
            elif kind == "conv":
                _, w, bias = op
                x = _kernels.conv3d_forward(nn._pad_same(x, w.shape[2:]), w, bias)
            elif kind == "instance_norm":
                _, gamma, beta = op
                mu = x.mean(axis=(2, 3, 4), keepdims=True)
                var = x.var(axis=(2, 3, 4), keepdims=True)
                xhat = (x - mu) / np.sqrt(var + nn.INSTANCE_NORM_EPS)
                x = gamma.reshape(1, -1, 1, 1, 1) * xhat + beta.reshape(1, -1, 1, 1, 1)
            elif kind == "max_pool":
                x, _ = _kernels.maxpool3d_forward(x, op[1])
            elif kind == "avg_pool":
                x = x.mean(axis=(2, 3, 4), keepdims=True)
            else:
                x = np.maximum(x, 0)
        return x.reshape(n)


@dataclass
class BenchReport:
    items_per_second: float
    total_items: int
    elapsed_seconds: float
    warmup_seconds: float


def _timed_loop(fn, items: np.ndarray, duration_s: float, warmup_s: float) -> BenchReport:
    if duration_s < 0 or warmup_s < 0:
        raise ValueError("durations must be non-negative")
    n = len(items)
    i = 0
    start = time.perf_counter()
    while time.perf_counter() - start < warmup_s:
        fn(items[i % n : i % n + 1])
        i += 1
    count = 0
    start = time.perf_counter()
    while (elapsed := time.perf_counter() - start) < duration_s:
        fn(items[count % n : count % n + 1])
        count += 1
    elapsed = time.perf_counter() - start
    throughput = count / elapsed if count else 0.0
    return BenchReport(throughput, count, elapsed, warmup_s)


def benchmark(
    spec: nn.ModelSpec,
    params: np.ndarray,
    mask: PruneMask,
    items: np.ndarray,
    duration_s: float = 60.0,
    warmup_s: float = 10.0,
    max_bytes: int = 2**31,
) -> tuple[BenchReport, BenchReport]:
    """Timed single-item inference throughput of the dense model vs its
    sparse lowering, on identical inputs."""
    dense_model = DenseRunner(spec, params, mask)
    sparse_model = SparseModel(spec, params, mask, max_bytes=max_bytes)
    dense_report = _timed_loop(dense_model.forward, items, duration_s, warmup_s)
    sparse_report = _timed_loop(sparse_model.forward, items, duration_s, warmup_s)
    return dense_report, sparse_report
