"""Loading, preprocessing, degradation and synthesis of ST slices.

A slice couples 2D spot coordinates with a nonnegative expression matrix
(spots x genes). Expression is stored densely; sparsity lives in the
values, and the on-disk interchange format is a sparse triplet text file:

    header line  "n g nnz"
    data lines   "row col value"     (0-indexed)

Coordinates travel as two-column CSV/TSV, labels as one token per line,
gene names as one name per line. Values are printed at 9 significant
digits and the writers round-trip bit-exactly with the readers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

_FMT = "%.9g"


def _fmt(v: float) -> str:
    return _FMT % v


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class STSlice:
    """One tissue slice: spot coordinates, expression matrix, metadata.

    coords: (n, 2) float array, arbitrary spatial units.
    expr:   (n, g) nonnegative float array.
    gene_names: g identifiers.
    labels: optional n categorical cell-type tokens.
    """

    coords: np.ndarray
    expr: np.ndarray
    gene_names: tuple[str, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        coords = _frozen(np.asarray(self.coords, dtype=np.float64))
        expr = _frozen(np.asarray(self.expr, dtype=np.float64))
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "expr", expr)
        object.__setattr__(self, "gene_names", tuple(self.gene_names))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise DataError(f"coords must be (n, 2), got {coords.shape}")
        if expr.ndim != 2:
            raise DataError(f"expr must be 2-D, got {expr.shape}")
        if expr.shape[0] != coords.shape[0]:
            raise DataError(
                f"row mismatch: {expr.shape[0]} expression rows vs "
                f"{coords.shape[0]} coordinates"
            )
        if len(self.gene_names) != expr.shape[1]:
            raise DataError(
                f"{len(self.gene_names)} gene names for {expr.shape[1]} genes"
            )
        if self.labels is not None and len(self.labels) != coords.shape[0]:
            raise DataError(
                f"{len(self.labels)} labels for {coords.shape[0]} spots"
            )
        if expr.size and expr.min() < 0:
            raise DataError("expression matrix contains negative entries")
        if not np.isfinite(coords).all():
            raise DataError("coordinates contain non-finite values")

    @property
    def n_spots(self) -> int:
        return self.coords.shape[0]

    @property
    def n_genes(self) -> int:
        return self.expr.shape[1]

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.expr))

    def zero_fraction(self) -> float:
        return 1.0 - self.nnz / self.expr.size

    def take_spots(self, idx: np.ndarray) -> "STSlice":
        labels = None if self.labels is None else tuple(self.labels[i] for i in idx)
        return STSlice(self.coords[idx], self.expr[idx], self.gene_names, labels)


@dataclass(frozen=True)
class DegradationSpec:
    """One degradation to apply to a clean slice."""

    kind: str  # spatial_split | gene_mask | gaussian_noise
    fraction: float = 0.8
    sigma: float = 1.0
    clamp_nonnegative: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("spatial_split", "gene_mask", "gaussian_noise"):
            raise DataError(f"unknown degradation kind {self.kind!r}")
        if not 0.0 < self.fraction < 1.0:
            raise DataError(f"fraction must be in (0,1), got {self.fraction}")
        if self.sigma < 0:
            raise DataError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class SyntheticParams:
    """Controls for the zero-inflated synthetic slice generator."""

    n_spots: int = 1000
    n_genes: int = 300
    n_types: int = 5
    target_sparsity: float = 0.9
    signature_genes_per_type: int = 20
    seed: int = 0

    def __post_init__(self):
        if min(self.n_spots, self.n_genes, self.n_types) < 1:
            raise DataError("n_spots, n_genes, n_types must be positive")
        if self.n_types > self.n_spots:
            raise DataError("n_types may not exceed n_spots")
        if not 0.0 < self.target_sparsity < 1.0:
            raise DataError("target_sparsity must be in (0,1)")
        if self.signature_genes_per_type < 1:
            raise DataError("signature_genes_per_type must be positive")
        if self.signature_genes_per_type * self.n_types > self.n_genes:
            raise DataError("signature genes exceed n_genes")


# ---------------------------------------------------------------------------
# file I/O


def _parse_error(path, lineno, msg) -> DataError:
    return DataError(f"{path}:{lineno}: {msg}")


def read_triplets(path) -> np.ndarray:
    """Read a sparse triplet text file into a dense (n, g) array."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 3:
            raise _parse_error(path, 1, f"expected header 'n g nnz', got {header!r}")
        try:
            n, g, nnz = (int(p) for p in parts)
        except ValueError:
            raise _parse_error(path, 1, f"unparsable header {header!r}") from None
        if n < 0 or g < 0 or nnz < 0:
            raise _parse_error(path, 1, "negative dimension in header")
        mat = np.zeros((n, g), dtype=np.float64)
        count = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise _parse_error(path, lineno, f"expected 'row col value', got {line!r}")
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise _parse_error(path, lineno, f"unparsable entry {line!r}") from None
            if not (0 <= i < n and 0 <= j < g):
                raise _parse_error(path, lineno, f"index ({i},{j}) out of range ({n},{g})")
            if v < 0:
                raise _parse_error(path, lineno, f"negative entry {v}")
            mat[i, j] = v
            count += 1
    if count != nnz:
        raise _parse_error(path, 1, f"header claims nnz={nnz}, file has {count} entries")
    return mat


def write_triplets(mat: np.ndarray, path, threshold: float = 0.0) -> None:
    """Write a matrix as sparse triplets; entries <= threshold are omitted."""
    mat = np.asarray(mat)
    rows, cols = np.nonzero(mat > threshold)
    with open(path, "w") as fh:
        fh.write(f"{mat.shape[0]} {mat.shape[1]} {len(rows)}\n")
        for i, j in zip(rows, cols):
            fh.write(f"{i} {j} {_fmt(mat[i, j])}\n")


def write_dense_csv(mat: np.ndarray, path) -> None:
    """Dense CSV export (practical only for small gene counts)."""
    with open(path, "w") as fh:
        for row in np.asarray(mat):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_coords(path) -> np.ndarray:
    """Read two numeric columns from CSV/TSV/whitespace text, optional header."""
    path = Path(path)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            for sep in (",", "\t", None):
                parts = line.split(sep)
                if len(parts) == 2:
                    break
            if len(parts) != 2:
                raise _parse_error(path, lineno, f"expected two columns, got {line!r}")
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except ValueError:
                if lineno == 1:
                    continue  # header line
                raise _parse_error(path, lineno, f"unparsable coordinates {line!r}") from None
    if not rows:
        raise DataError(f"{path}: no coordinate rows")
    return np.array(rows, dtype=np.float64)


def write_coords(coords: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        for x, y in np.asarray(coords):
            fh.write(f"{_fmt(x)},{_fmt(y)}\n")


def read_lines(path) -> tuple[str, ...]:
    with open(path) as fh:
        return tuple(line.strip() for line in fh if line.strip())


def write_lines(items: Sequence[str], path) -> None:
    with open(path, "w") as fh:
        for item in items:
            fh.write(f"{item}\n")


def load_slice(expr_path, coords_path, labels_path=None, genes_path=None) -> STSlice:
    """Assemble an STSlice from triplet expression + coordinate files.

    Gene names come from the optional companion file or default to g0..g{g-1}.
    """
    expr = read_triplets(expr_path)
    coords = read_coords(coords_path)
    if coords.shape[0] != expr.shape[0]:
        raise DataError(
            f"{coords_path} has {coords.shape[0]} rows but {expr_path} "
            f"declares {expr.shape[0]} spots"
        )
    if genes_path is not None:
        gene_names = read_lines(genes_path)
        if len(gene_names) != expr.shape[1]:
            raise DataError(
                f"{genes_path} has {len(gene_names)} names for {expr.shape[1]} genes"
            )
    else:
        gene_names = tuple(f"g{j}" for j in range(expr.shape[1]))
    labels = None
    if labels_path is not None:
        labels = read_lines(labels_path)
        if len(labels) != expr.shape[0]:
            raise DataError(
                f"{labels_path} has {len(labels)} labels for {expr.shape[0]} spots"
            )
    return STSlice(coords, expr, gene_names, labels)


def save_slice(slice_: STSlice, expr_path, coords_path, labels_path=None, genes_path=None) -> None:
    write_triplets(slice_.expr, expr_path)
    write_coords(slice_.coords, coords_path)
    if genes_path is not None:
        write_lines(slice_.gene_names, genes_path)
    if labels_path is not None and slice_.labels is not None:
        write_lines(slice_.labels, labels_path)


# ---------------------------------------------------------------------------
# preprocessing


def filter_empty(slice_: STSlice) -> STSlice:
    """Drop all-zero spots and all-zero genes."""
    keep_rows = np.flatnonzero(slice_.expr.any(axis=1))
    if keep_rows.size == 0:
        raise DataError("every spot is empty after filtering")
    keep_cols = np.flatnonzero(slice_.expr.any(axis=0))
    expr = slice_.expr[np.ix_(keep_rows, keep_cols)]
    genes = tuple(slice_.gene_names[j] for j in keep_cols)
    labels = None
    if slice_.labels is not None:
        labels = tuple(slice_.labels[i] for i in keep_rows)
    return STSlice(slice_.coords[keep_rows], expr, genes, labels)


def normalize_total(
    slice_: STSlice, target_sum: float = 1e4, high_expr_fraction: float = 0.5
) -> STSlice:
    """Remove dominating genes, then scale every spot to the same total count.

    A gene is removed when it accounts for more than high_expr_fraction of
    any single spot's total. Spots emptied by the removal are dropped (and
    logged). Zeros stay zeros.
    """
    if not 0.0 < high_expr_fraction <= 1.0:
        raise DataError("high_expr_fraction must be in (0, 1]")
    if target_sum <= 0:
        raise DataError("target_sum must be positive")
    expr = slice_.expr
    totals = expr.sum(axis=1, keepdims=True)
    if np.any(totals == 0):
        raise DataError("normalize_total requires filter_empty first (empty spot found)")
    high = (expr > high_expr_fraction * totals).any(axis=0)
    keep_cols = np.flatnonzero(~high)
    if keep_cols.size == 0:
        raise DataError("every gene exceeds the high-expression threshold")
    expr = expr[:, keep_cols]
    genes = tuple(slice_.gene_names[j] for j in keep_cols)

    row_sums = expr.sum(axis=1)
    keep_rows = np.flatnonzero(row_sums > 0)
    dropped = slice_.n_spots - keep_rows.size
    if dropped:
        log.warning("normalize_total dropped %d spot(s) emptied by gene removal", dropped)
    if keep_rows.size == 0:
        raise DataError("every spot emptied by high-expression gene removal")
    expr = expr[keep_rows] * (target_sum / row_sums[keep_rows, None])
    labels = None
    if slice_.labels is not None:
        labels = tuple(slice_.labels[i] for i in keep_rows)
    return STSlice(slice_.coords[keep_rows], expr, genes, labels)


# ---------------------------------------------------------------------------
# degradations (pure: the input slice is never modified)


def split_spatial(slice_: STSlice, train_fraction: float, seed: int) -> tuple[STSlice, STSlice]:
    """Random disjoint spot partition with |train| = round(fraction * n)."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must be in (0,1), got {train_fraction}")
    n = slice_.n_spots
    n_train = int(round(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise DataError(f"split of {n} spots at {train_fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return slice_.take_spots(train_idx), slice_.take_spots(test_idx)


def mask_genes(slice_: STSlice, fraction: float, seed: int) -> tuple[STSlice, np.ndarray]:
    """Mute floor(fraction * n * g) uniformly random matrix elements.

    Returns the degraded slice and the boolean mask of muted positions.
    """
    if not 0.0 < fraction < 1.0:
        raise DataError(f"fraction must be in (0,1), got {fraction}")
    n, g = slice_.expr.shape
    n_mute = int(np.floor(fraction * n * g))
    flat = np.random.default_rng(seed).choice(n * g, size=n_mute, replace=False)
    mask = np.zeros(n * g, dtype=bool)
    mask[flat] = True
    mask = mask.reshape(n, g)
    expr = slice_.expr.copy()
    expr[mask] = 0.0
    degraded = STSlice(slice_.coords, expr, slice_.gene_names, slice_.labels)
    return degraded, _frozen(mask)


def add_noise(slice_: STSlice, sigma: float, clamp_nonnegative: bool, seed: int) -> STSlice:
    """Add i.i.d. N(0, sigma^2) to every entry; optionally clamp at zero.

    Without clamping the result can carry negative entries, so the noisy
    matrix is returned raw rather than wrapped in the nonnegative STSlice
    contract; use the returned slice only as a training target.
    """
    if sigma < 0:
        raise DataError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=slice_.expr.shape) if sigma > 0 else 0.0
    expr = slice_.expr + noise
    if clamp_nonnegative:
        expr = np.maximum(expr, 0.0)
    return NoisySlice(slice_.coords, expr, slice_.gene_names, slice_.labels)


class NoisySlice(STSlice):
    """STSlice that tolerates negative entries (Gaussian-corrupted data)."""

    def __post_init__(self):
        coords = _frozen(np.asarray(self.coords, dtype=np.float64))
        expr = _frozen(np.asarray(self.expr, dtype=np.float64))
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "expr", expr)
        object.__setattr__(self, "gene_names", tuple(self.gene_names))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))


def apply_degradation(slice_: STSlice, spec: DegradationSpec):
    """Dispatch one DegradationSpec; return value depends on the kind."""
    if spec.kind == "spatial_split":
        return split_spatial(slice_, spec.fraction, spec.seed)
    if spec.kind == "gene_mask":
        return mask_genes(slice_, spec.fraction, spec.seed)
    return add_noise(slice_, spec.sigma, spec.clamp_nonnegative, spec.seed)


# ---------------------------------------------------------------------------
# synthetic data

_SIGNATURE_RATE = 6.0
_SILENT_RATE = 0.05
_GRADIENT_RATE = 8.0
_GRADIENT_SHARE = 0.3  # fraction of background genes carrying a spatial ramp
_GRADIENT_OFFSET = (-0.35, -0.05)
_DEPTH_RANGE = (0.7, 1.3)


def generate_synthetic(params: SyntheticParams) -> STSlice:
    """Zero-inflated synthetic slice with spatially coherent cell types.

    Spots land uniformly in [0,1]^2 and take the type of the nearest of
    n_types region centers. Each type elevates the Poisson rate of its own
    signature-gene block. Shared background genes split into a mostly
    silent majority and a minority of gradient genes whose rate ramps up
    linearly across a random spatial front and is exactly zero beyond it,
    so held-out support prediction stays non-trivial around the fronts.
    Bernoulli dropout then thins nonzeros to hit target_sparsity; rates are
    rescaled first when the base rates cannot reach the requested density.
    """
    rng = np.random.default_rng(params.seed)
    n, g, t = params.n_spots, params.n_genes, params.n_types
    coords = rng.uniform(0.0, 1.0, size=(n, 2))

    type_idx = None
    for _ in range(64):
        centers = rng.uniform(0.0, 1.0, size=(t, 2))
        d2 = ((coords[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        cand = d2.argmin(axis=1)
        if np.unique(cand).size == t:
            type_idx = cand
            break
    if type_idx is None:
        raise DataError(f"could not place {t} occupied regions among {n} spots")

    sig = params.signature_genes_per_type
    n_signature = sig * t
    n_gradient = int(round(_GRADIENT_SHARE * (g - n_signature)))
    rates = np.full((t, g), _SILENT_RATE)
    for ti in range(t):
        rates[ti, ti * sig : (ti + 1) * sig] = _SIGNATURE_RATE
    depth = rng.uniform(*_DEPTH_RANGE, size=n)
    lam = depth[:, None] * rates[type_idx]
    if n_gradient:
        grad_cols = slice(n_signature, n_signature + n_gradient)
        angle = rng.uniform(0.0, 2.0 * np.pi, size=n_gradient)
        direction = np.stack([np.cos(angle), np.sin(angle)], axis=1)
        offset = rng.uniform(*_GRADIENT_OFFSET, size=n_gradient)
        ramp = np.maximum((coords - 0.5) @ direction.T + offset, 0.0)
        lam[:, grad_cols] = _GRADIENT_RATE * ramp * depth[:, None]

    target_nz = 1.0 - params.target_sparsity

    def nonzero_frac(scale: float) -> float:
        return float(np.mean(1.0 - np.exp(-scale * lam)))

    scale = 1.0
    if nonzero_frac(scale) < target_nz:
        lo, hi = 1.0, 2.0
        while nonzero_frac(hi) < target_nz and hi < 1e6:
            hi *= 2.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if nonzero_frac(mid) < target_nz:
                lo = mid
            else:
                hi = mid
        scale = hi
    keep_prob = min(1.0, target_nz / nonzero_frac(scale))

    counts = rng.poisson(scale * lam).astype(np.float64)
    kept = rng.uniform(size=(n, g)) < keep_prob
    expr = counts * kept

    realized = float(np.mean(expr == 0))
    if abs(realized - params.target_sparsity) > 0.05:
        raise DataError(
            f"realized sparsity {realized:.3f} outside +-0.05 of "
            f"target {params.target_sparsity:.3f} after rate calibration"
        )
    labels = tuple(f"type{ti}" for ti in type_idx)
    gene_names = tuple(f"g{j:04d}" for j in range(g))
    return STSlice(coords, expr, gene_names, labels)
