"""Electrostatic fields of a parametric parallel-plate capacitor.

A grounded unit box filled with air holds two horizontal plate electrodes
at potentials +v0 and -v0, placed symmetrically about mid-height with
separation d. The potential satisfies the Laplace equation; it is
discretized with the 5-point stencil on a uniform fine grid, relaxed with
successive over-relaxation (SOR), and sampled down to the coarse grid the
learning stages consume.

Grid convention: values[i, j] is the potential at (x, y) = (j*h, i*h)
with h = 1/(n-1), so row index follows y and column index follows x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GeometryError",
    "ConvergenceError",
    "CapacitorConfig",
    "BoundaryMask",
    "FieldGrid",
    "Dataset",
    "TRAIN_D",
    "TEST_D",
    "build_boundary_mask",
    "solve_sor",
    "downsample",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
]

# Default parameter grids for the benchmark pipeline: 120 training
# separations spread over [0.1, 0.9], and the seven evaluation separations
# (the six round values plus the 0.36 scenario used for field exports).
TRAIN_D = tuple(float(x) for x in np.linspace(0.1, 0.9, 120))
TEST_D = (0.3, 0.36, 0.4, 0.5, 0.6, 0.7, 0.8)


class GeometryError(ValueError):
    """A capacitor configuration cannot be realized on the grid."""


class ConvergenceError(RuntimeError):
    """SOR ran out of sweeps; carries the last sweep's max update."""

    def __init__(self, message: str, residual: float, sweeps: int):
        super().__init__(message)
        self.residual = residual
        self.sweeps = sweeps


@dataclass(frozen=True)
class CapacitorConfig:
    """Geometry and discretization of one capacitor instance.

    d is the plate separation, a/b the horizontal extent of both plates,
    v0 the plate potential magnitude. fine_n is the solve resolution per
    side, coarse_n the resolution kept for the learning stages; the fine
    step count must be an integer multiple of the coarse one.
    """

    d: float
    a: float = 0.25
    b: float = 0.75
    v0: float = 1.0
    fine_n: int = 401
    coarse_n: int = 21

    def __post_init__(self) -> None:
        if not (0.0 <= self.a < self.b <= 1.0):
            raise GeometryError(f"plate span must satisfy 0 <= a < b <= 1, got a={self.a}, b={self.b}")
        if not (0.0 <= self.d <= 1.0):
            raise GeometryError(f"plate separation must lie in [0, 1], got d={self.d}")
        if self.v0 <= 0.0:
            raise GeometryError(f"plate potential must be positive, got v0={self.v0}")
        if self.fine_n < 3:
            raise GeometryError(f"fine_n must be at least 3, got {self.fine_n}")
        if self.coarse_n < 2:
            raise GeometryError(f"coarse_n must be at least 2, got {self.coarse_n}")
        if (self.fine_n - 1) % (self.coarse_n - 1) != 0:
            raise GeometryError(
                f"fine step count {self.fine_n - 1} is not a multiple of coarse step count {self.coarse_n - 1}"
            )

    def plate_rows(self) -> tuple[int, int]:
        """(lower, upper) fine-grid rows of the plates after snapping.

        Each plate row y = 0.5 -/+ d/2 snaps to the nearest fine-grid row,
        so the geometric placement error is at most h/2.
        """
        m = self.fine_n - 1
        lower = int(round((0.5 - self.d / 2.0) * m))
        upper = int(round((0.5 + self.d / 2.0) * m))
        return lower, upper

    def plate_columns(self) -> tuple[int, int]:
        """Inclusive fine-grid column span [c0, c1] of both plates."""
        m = self.fine_n - 1
        return int(round(self.a * m)), int(round(self.b * m))


@dataclass
class BoundaryMask:
    """Dirichlet data on the fine grid: which nodes are fixed, and at what value."""

    fixed: np.ndarray
    value: np.ndarray

    def __post_init__(self) -> None:
        self.fixed = np.asarray(self.fixed, dtype=bool)
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.fixed.ndim != 2 or self.fixed.shape[0] != self.fixed.shape[1]:
            raise ValueError(f"fixed mask must be square, got shape {self.fixed.shape}")
        if self.value.shape != self.fixed.shape:
            raise ValueError(f"value shape {self.value.shape} does not match mask shape {self.fixed.shape}")
        if np.any(self.value[~self.fixed] != 0.0):
            raise ValueError("value must be zero at non-fixed nodes")

    @property
    def n(self) -> int:
        return self.fixed.shape[0]


@dataclass
class FieldGrid:
    """A square potential grid. units is 'volts' or 'normalized' (divided by v0)."""

    values: np.ndarray
    units: str = "volts"

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ValueError(f"field grid must be square, got shape {self.values.shape}")
        if self.units not in ("volts", "normalized"):
            raise ValueError(f"unknown units {self.units!r}")

    @property
    def n(self) -> int:
        return self.values.shape[0]


def build_boundary_mask(config: CapacitorConfig) -> BoundaryMask:
    """Assemble the Dirichlet mask for one capacitor configuration.

    The outer box is grounded (0 V). The two plate segments are fixed at
    +v0 (upper) and -v0 (lower). Raises GeometryError when snapping puts a
    plate on the outer wall while d < 1 (degenerate geometry) or collapses
    the two plate rows onto each other (insufficient resolution).
    """
    n = config.fine_n
    m = n - 1
    lower, upper = config.plate_rows()
    if lower == upper:
        raise GeometryError(
            f"resolution error: both plate rows snap to fine row {lower} (d={config.d}, fine_n={n})"
        )
    if config.d < 1.0 and (lower <= 0 or upper >= m):
        raise GeometryError(
            f"degenerate geometry: plate row snaps onto the outer wall (rows {lower}, {upper}, d={config.d})"
        )

    fixed = np.zeros((n, n), dtype=bool)
    value = np.zeros((n, n), dtype=np.float64)
    fixed[0, :] = fixed[-1, :] = fixed[:, 0] = fixed[:, -1] = True

    c0, c1 = config.plate_columns()
    fixed[upper, c0 : c1 + 1] = True
    value[upper, c0 : c1 + 1] = config.v0
    fixed[lower, c0 : c1 + 1] = True
    value[lower, c0 : c1 + 1] = -config.v0
    return BoundaryMask(fixed=fixed, value=value)


def optimal_omega(n: int) -> float:
    """The asymptotically optimal SOR relaxation factor for an n x n grid."""
    if n < 3:
        raise ValueError(f"grid side must be at least 3, got {n}")
    return 2.0 / (1.0 + math.sin(math.pi / n))


def solve_sor(
    mask: BoundaryMask,
    omega: float | None = None,
    tol: float | None = None,
    max_sweeps: int = 100_000,
) -> FieldGrid:
    """Relax the 5-point Laplace stencil to convergence with SOR.

    Free nodes start at zero and are updated in red-black order; Dirichlet
    nodes are never touched. omega defaults to the optimal value
    2/(1 + sin(pi/n)) for this stencil; tol defaults to 1e-6 times the
    largest prescribed magnitude.

    The sweep loop stops once the max absolute update of a full sweep is
    small enough that the estimated solution error is below tol. The decay
    ratio of successive sweep updates over a trailing window estimates the
    convergence factor rho, and the update threshold tol*(1-rho)/rho
    (capped at tol, scaled by a safety margin) converts the update size
    into a solution-error target. The returned grid therefore always
    satisfies the weaker guarantee "max update in the final sweep < tol".

    Raises ConvergenceError (carrying the last update) when max_sweeps is
    exhausted first.
    """
    n = mask.n
    if omega is None:
        omega = optimal_omega(n)
    if not (1.0 <= omega < 2.0):
        raise ValueError(f"omega must lie in [1, 2), got {omega}")
    if tol is None:
        scale = float(np.max(np.abs(mask.value))) if mask.fixed.any() else 0.0
        tol = 1e-6 * (scale if scale > 0.0 else 1.0)
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_sweeps < 1:
        raise ValueError(f"max_sweeps must be at least 1, got {max_sweeps}")

    v = np.where(mask.fixed, mask.value, 0.0)
    free = ~mask.fixed
    # The red ((i+j) even) and black nodes each decompose into two
    # interleaved sub-lattices, so one sweep is four strided passes that
    # touch only the nodes being updated. Red offsets come first.
    subsets = []
    for i0, j0 in ((1, 1), (2, 2), (1, 2), (2, 1)):
        fsub = free[i0 : n - 1 : 2, j0 : n - 1 : 2]
        if fsub.size:
            subsets.append((i0, j0, fsub.astype(np.float64), np.empty_like(fsub, dtype=np.float64)))

    window = 20  # sweeps between the two update samples used for the rho estimate
    safety = 0.2
    updates: list[float] = []
    dmax = math.inf
    for sweep in range(1, max_sweeps + 1):
        dmax = 0.0
        for i0, j0, fsub, buf in subsets:
            target = v[i0 : n - 1 : 2, j0 : n - 1 : 2]
            np.add(v[i0 - 1 : n - 2 : 2, j0 : n - 1 : 2], v[i0 + 1 : n : 2, j0 : n - 1 : 2], out=buf)
            buf += v[i0 : n - 1 : 2, j0 - 1 : n - 2 : 2]
            buf += v[i0 : n - 1 : 2, j0 + 1 : n : 2]
            buf *= 0.25
            buf -= target
            buf *= omega
            buf *= fsub
            target += buf
            np.abs(buf, out=buf)
            dmax = max(dmax, float(buf.max()))
        updates.append(dmax)
        if dmax == 0.0 or dmax < 1e-3 * tol:
            return FieldGrid(values=v)
        if sweep > window and updates[-1 - window] > 0.0:
            rho = (dmax / updates[-1 - window]) ** (1.0 / window)
            rho = min(max(rho, 1e-6), 0.999999)
            if dmax < safety * tol * min(1.0, (1.0 - rho) / max(rho, 0.5)):
                return FieldGrid(values=v)
    raise ConvergenceError(
        f"SOR did not reach tol={tol:.3e} within {max_sweeps} sweeps (last update {dmax:.3e})",
        residual=dmax,
        sweeps=max_sweeps,
    )


def downsample(grid: FieldGrid, coarse_n: int) -> FieldGrid:
    """Keep every k-th node per side so that coarse_n nodes remain."""
    if coarse_n < 2:
        raise ValueError(f"coarse_n must be at least 2, got {coarse_n}")
    if (grid.n - 1) % (coarse_n - 1) != 0:
        raise ValueError(f"cannot downsample {grid.n} nodes per side to {coarse_n}: step counts not divisible")
    k = (grid.n - 1) // (coarse_n - 1)
    return FieldGrid(values=grid.values[::k, ::k].copy(), units=grid.units)


@dataclass
class Dataset:
    """Flattened coarse fields, one row per separation d, normalized by v0."""

    grid_n: int
    v0: float
    d: np.ndarray
    fields: np.ndarray

    def __post_init__(self) -> None:
        self.d = np.asarray(self.d, dtype=np.float64)
        self.fields = np.asarray(self.fields, dtype=np.float64)
        if self.d.ndim != 1:
            raise ValueError("d must be a 1-D array")
        width = self.grid_n * self.grid_n
        if self.fields.shape != (self.d.shape[0], width):
            raise ValueError(
                f"fields shape {self.fields.shape} does not match {self.d.shape[0]} samples of width {width}"
            )
        if self.v0 <= 0.0:
            raise ValueError(f"v0 must be positive, got {self.v0}")

    def __len__(self) -> int:
        return int(self.d.shape[0])

    def field_grid(self, index: int) -> FieldGrid:
        """The index-th sample reshaped to its square grid (normalized units)."""
        side = self.grid_n
        return FieldGrid(values=self.fields[index].reshape(side, side).copy(), units="normalized")


def generate_dataset(
    d_values,
    a: float = 0.25,
    b: float = 0.75,
    v0: float = 1.0,
    fine_n: int = 401,
    coarse_n: int = 21,
    omega: float | None = None,
    tol: float | None = None,
    max_sweeps: int = 100_000,
) -> Dataset:
    """Solve one capacitor per separation value and collect the coarse fields.

    Samples are solved independently from a cold start and stored in
    ascending d order. Solver and geometry failures are re-raised with the
    offending d in the message. Fields are flattened row-major and divided
    by v0, so entries lie in [-1, 1].
    """
    d_sorted = sorted(float(x) for x in d_values)
    width = coarse_n * coarse_n
    rows = np.empty((len(d_sorted), width), dtype=np.float64)
    for i, dv in enumerate(d_sorted):
        try:
            config = CapacitorConfig(d=dv, a=a, b=b, v0=v0, fine_n=fine_n, coarse_n=coarse_n)
            mask = build_boundary_mask(config)
            fine = solve_sor(mask, omega=omega, tol=tol, max_sweeps=max_sweeps)
        except GeometryError as exc:
            raise GeometryError(f"sample d={dv!r}: {exc}") from exc
        except ConvergenceError as exc:
            raise ConvergenceError(f"sample d={dv!r}: {exc}", residual=exc.residual, sweeps=exc.sweeps) from exc
        coarse = downsample(fine, coarse_n)
        rows[i] = coarse.values.ravel() / v0
    return Dataset(grid_n=coarse_n, v0=v0, d=np.asarray(d_sorted, dtype=np.float64), fields=rows)


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset as comma-separated text, one sample per line.

    Header: grid=<n>,count=<m>,v0=<v0>. Each record holds d followed by
    the grid_n^2 normalized potentials. Floats are written with repr so a
    save/load round trip is bit-exact.
    """
    lines = [f"grid={dataset.grid_n},count={len(dataset)},v0={repr(float(dataset.v0))}"]
    for dv, row in zip(dataset.d, dataset.fields):
        lines.append(",".join([repr(float(dv))] + [repr(float(x)) for x in row]))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    """Read a dataset written by save_dataset."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = dict(item.split("=", 1) for item in lines[0].split(","))
    try:
        grid_n = int(header["grid"])
        count = int(header["count"])
        v0 = float(header["v0"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed dataset header {lines[0]!r}") from exc
    records = lines[1:]
    if len(records) != count:
        raise ValueError(f"{path}: header promises {count} records, found {len(records)}")
    width = grid_n * grid_n
    d = np.empty(count, dtype=np.float64)
    fields = np.empty((count, width), dtype=np.float64)
    for i, line in enumerate(records):
        parts = line.split(",")
        if len(parts) != width + 1:
            raise ValueError(f"{path}: record {i} has {len(parts)} values, expected {width + 1}")
        d[i] = float(parts[0])
        fields[i] = [float(p) for p in parts[1:]]
    return Dataset(grid_n=grid_n, v0=v0, d=d, fields=fields)
