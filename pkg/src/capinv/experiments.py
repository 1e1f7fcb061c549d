"""Benchmark harness: error metric, noise sweeps, stage timing, CSV export.

Outputs are plain-text comma-separated tables with self-describing
headers, written with repr floats so that re-reading a file reproduces
every value bit for bit. No plotting here; the tables are plot-ready.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fields import Dataset, FieldGrid, TEST_D
from .generative import decode, encode
from .inverse import (
    InverseOptions,
    InverseProblem,
    InversePipeline,
    InversionError,
    RegressionError,
    fit_regression,
    inverse_predict,
    recover_field,
)

__all__ = [
    "ssd",
    "SweepConfig",
    "SweepCell",
    "AggregateRow",
    "SweepResult",
    "StageTiming",
    "TimingTable",
    "run_noise_sweep",
    "aggregate_cells",
    "run_timing",
    "export_results",
    "read_ssd_table",
    "read_sweep_cells",
    "read_timing_table",
    "read_field_blocks",
]

EXPORT_NAMES = (
    "fig6_fields.csv",
    "fig8_ssd.csv",
    "fig9_ssd.csv",
    "table2_timing.csv",
    "sweep_cells.csv",
)

TIMING_STAGES = ("encoder", "regression", "inverse", "decoder")


def ssd(a: FieldGrid, b: FieldGrid) -> float:
    """Sum of squared node differences between two same-shape, same-units grids."""
    if a.values.shape != b.values.shape:
        raise ValueError(f"grid shape mismatch: {a.values.shape} vs {b.values.shape}")
    if a.units != b.units:
        raise ValueError(f"units mismatch: {a.units!r} vs {b.units!r}")
    diff = a.values - b.values
    return float(np.sum(diff * diff))


@dataclass(frozen=True)
class SweepConfig:
    """Grid of sweep cells: every approach x test d x noise level x seed.

    keep_fields_d lists the separations whose recovered grids are retained
    on the cells (and exported as field blocks).
    """

    noise_levels: tuple = (0.01, 0.1, 0.5, 1.0)
    test_d: tuple = TEST_D
    seeds: tuple = (0, 1, 2, 3, 4)
    keep_fields_d: tuple = (0.36,)
    corrupt_field_first: bool = False
    inverse_options: InverseOptions = field(default_factory=InverseOptions)


@dataclass
class SweepCell:
    approach: str
    optimizer: str
    d: float
    e: float
    seed: int
    ssd: float
    error: str | None = None
    field_values: np.ndarray | None = None


@dataclass
class AggregateRow:
    approach: str
    optimizer: str
    d: float
    e: float
    n_seeds: int
    ssd_median: float
    ssd_iqr: float


@dataclass
class SweepResult:
    cells: list
    groundtruth: list  # (d, grid values) pairs for the kept separations


def _match_d(values: np.ndarray, d: float) -> int:
    hits = np.flatnonzero(np.isclose(values, d, rtol=0.0, atol=1e-9))
    if hits.size == 0:
        raise ValueError(f"no groundtruth field for d={d!r}")
    return int(hits[0])


def run_noise_sweep(config: SweepConfig, pipelines: dict, test_set: Dataset) -> SweepResult:
    """Evaluate every (approach, d, e, seed) cell against the groundtruth set.

    A failing cell records the error message and a NaN ssd instead of
    aborting the sweep. Cells are emitted in a fixed deterministic order
    (approach, then d, then e, then seed), and every cell is independent,
    so the result does not depend on evaluation order.
    """
    cells: list[SweepCell] = []
    truth: list[tuple[float, np.ndarray]] = []
    kept = set()
    for d in config.test_d:
        idx = _match_d(test_set.d, d)  # fail fast if the groundtruth is missing
        if any(math.isclose(d, k, abs_tol=1e-9) for k in config.keep_fields_d) and d not in kept:
            truth.append((float(d), test_set.field_grid(idx).values))
            kept.add(d)
    for name, pipeline in pipelines.items():
        for d in config.test_d:
            reference = test_set.field_grid(_match_d(test_set.d, d))
            keep = any(math.isclose(d, k, abs_tol=1e-9) for k in config.keep_fields_d)
            for e in config.noise_levels:
                for seed in config.seeds:
                    try:
                        grid = recover_field(
                            pipeline,
                            d,
                            e,
                            seed,
                            options=config.inverse_options,
                            corrupt_field_first=config.corrupt_field_first,
                        )
                        value = ssd(reference, grid)
                        cells.append(
                            SweepCell(
                                approach=name,
                                optimizer=pipeline.optimizer_tag,
                                d=float(d),
                                e=float(e),
                                seed=int(seed),
                                ssd=value,
                                field_values=grid.values.copy() if keep else None,
                            )
                        )
                    except (InversionError, RegressionError, ValueError) as exc:
                        cells.append(
                            SweepCell(
                                approach=name,
                                optimizer=pipeline.optimizer_tag,
                                d=float(d),
                                e=float(e),
                                seed=int(seed),
                                ssd=float("nan"),
                                error=str(exc),
                            )
                        )
    return SweepResult(cells=cells, groundtruth=truth)


def aggregate_cells(cells) -> list:
    """Median and interquartile range over seeds per (approach, optimizer, d, e).

    Failed cells are excluded; a group with no surviving cells reports
    NaN with n_seeds = 0. Groups keep first-seen order, which is seed-order
    independent because grouping ignores the seed.
    """
    groups: dict[tuple, list[float]] = {}
    order: list[tuple] = []
    for cell in cells:
        key = (cell.approach, cell.optimizer, cell.d, cell.e)
        if key not in groups:
            groups[key] = []
            order.append(key)
        if cell.error is None:
            groups[key].append(cell.ssd)
    rows = []
    for key in order:
        values = np.sort(np.asarray(groups[key]))
        if values.size:
            median = float(np.median(values))
            iqr = float(np.percentile(values, 75) - np.percentile(values, 25))
        else:
            median = float("nan")
            iqr = float("nan")
        rows.append(
            AggregateRow(
                approach=key[0],
                optimizer=key[1],
                d=key[2],
                e=key[3],
                n_seeds=int(values.size),
                ssd_median=median,
                ssd_iqr=iqr,
            )
        )
    return rows


@dataclass
class StageTiming:
    approach: str
    optimizer: str
    space_dim: int
    encoder_ms: float | None
    regression_ms: float | None
    inverse_ms: float | None
    decoder_ms: float | None

    @property
    def total_ms(self) -> float:
        return sum(v for v in (self.encoder_ms, self.regression_ms, self.inverse_ms, self.decoder_ms) if v is not None)


@dataclass
class TimingTable:
    rows: list
    repetitions: int
    target_d: float


def _median_ms(fn, repetitions: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    samples = np.empty(repetitions)
    for i in range(repetitions):
        t0 = time.perf_counter()
        fn()
        samples[i] = time.perf_counter() - t0
    return float(np.median(samples)) * 1e3


def run_timing(
    pipelines: dict,
    dataset: Dataset,
    repetitions: int = 100,
    warmup: int = 10,
    target_d: float = 0.36,
) -> TimingTable:
    """Median wall-clock per pipeline stage, in milliseconds.

    Stages: encoder (one field encoded), regression (affine fit on the
    full training set in the approach's space), inverse (gradient descent
    to target_d from the clean anchor), decoder (one latent decoded).
    Fullspace has no encoder/decoder stage (None). The search-space
    dimension is recorded next to the timings. Times are hardware
    specific; only their relative structure is meaningful.
    """
    if repetitions < 1:
        raise ValueError(f"repetitions must be positive, got {repetitions}")
    if warmup < 0:
        raise ValueError(f"warmup must be nonnegative, got {warmup}")
    rows = []
    for name, pipe in pipelines.items():
        problem_opts = InverseOptions()
        if pipe.approach == "fullspace":
            features = dataset.fields
            encoder_ms = decoder_ms = None
        else:
            model = pipe.model
            if model is None:
                raise ValueError(f"pipeline {name!r} has no generative model attached")
            out = encode(model, dataset.fields)
            features = out if model.kind == "ae" else out[0]
            encoder_ms = _median_ms(lambda: encode(model, pipe.anchor_field), repetitions, warmup)
        regression_ms = _median_ms(
            lambda: fit_regression(features, dataset.d, space=pipe.approach), repetitions, warmup
        )
        inverse_ms = _median_ms(
            lambda: inverse_predict(pipe.regression, InverseProblem(target_d, pipe.anchor, problem_opts)),
            repetitions,
            warmup,
        )
        if pipe.approach == "latent":
            solution = inverse_predict(pipe.regression, InverseProblem(target_d, pipe.anchor, problem_opts))
            decoder_ms = _median_ms(lambda: decode(pipe.model, solution), repetitions, warmup)
        rows.append(
            StageTiming(
                approach=name,
                optimizer=pipe.optimizer_tag,
                space_dim=int(pipe.anchor.shape[0]),
                encoder_ms=encoder_ms,
                regression_ms=regression_ms,
                inverse_ms=inverse_ms,
                decoder_ms=decoder_ms,
            )
        )
    return TimingTable(rows=rows, repetitions=repetitions, target_d=target_d)


def _fmt(value) -> str:
    if value is None:
        return "-"
    return repr(float(value))


def write_field_block(fh, meta: dict, values: np.ndarray) -> None:
    fh.write(",".join(f"{k}={v}" for k, v in meta.items()) + "\n")
    for row in values:
        fh.write(",".join(repr(float(x)) for x in row) + "\n")


def write_timing_table(timing: TimingTable, path) -> None:
    """Stage column then one column per approach; '-' marks absent stages."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage"] + [row.approach for row in timing.rows])
        writer.writerow(["optimizer"] + [row.optimizer for row in timing.rows])
        writer.writerow(["space_dim"] + [str(row.space_dim) for row in timing.rows])
        for stage in TIMING_STAGES:
            writer.writerow([stage] + [_fmt(getattr(row, f"{stage}_ms")) for row in timing.rows])
        writer.writerow(["total"] + [_fmt(row.total_ms) for row in timing.rows])


def export_results(result: SweepResult, out_dir, timing: TimingTable | None = None) -> list:
    """Write the plot-ready tables into out_dir; returns the paths written.

    fig6_fields.csv   blocks: one meta line (approach=..,optimizer=..,d=..,
                      e=..,seed=..,grid=n) then n grid rows; groundtruth
                      blocks come first with approach=groundtruth.
    fig8_ssd.csv      aggregate rows (approach,optimizer,d,e,n_seeds,
                      ssd_median,ssd_iqr) for every non-adam tag.
    fig9_ssd.csv      the same aggregate columns for adam-tagged rows.
    table2_timing.csv stage column then one column per approach; '-'
                      marks stages an approach does not have.
    sweep_cells.csv   every raw cell (approach,optimizer,d,e,seed,ssd,
                      error), NaN ssd for failed cells.
    An empty result still writes every file, header-only.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / name for name in EXPORT_NAMES]

    with open(paths[0], "w", encoding="ascii", newline="") as fh:
        for d, values in result.groundtruth:
            meta = {
                "approach": "groundtruth",
                "optimizer": "-",
                "d": repr(float(d)),
                "e": "-",
                "seed": "-",
                "grid": values.shape[0],
            }
            write_field_block(fh, meta, values)
        for cell in result.cells:
            if cell.field_values is None:
                continue
            meta = {
                "approach": cell.approach,
                "optimizer": cell.optimizer,
                "d": repr(cell.d),
                "e": repr(cell.e),
                "seed": cell.seed,
                "grid": cell.field_values.shape[0],
            }
            write_field_block(fh, meta, cell.field_values)

    aggregates = aggregate_cells(result.cells)
    header = ["approach", "optimizer", "d", "e", "n_seeds", "ssd_median", "ssd_iqr"]
    for path, want_adam in ((paths[1], False), (paths[2], True)):
        with open(path, "w", encoding="ascii", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in aggregates:
                if (row.optimizer == "adam") is not want_adam:
                    continue
                writer.writerow(
                    [row.approach, row.optimizer, repr(row.d), repr(row.e), row.n_seeds,
                     _fmt(row.ssd_median), _fmt(row.ssd_iqr)]
                )

    if timing is None:
        with open(paths[3], "w", encoding="ascii", newline="") as fh:
            csv.writer(fh).writerow(["stage"])
    else:
        write_timing_table(timing, paths[3])

    with open(paths[4], "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["approach", "optimizer", "d", "e", "seed", "ssd", "error"])
        for cell in result.cells:
            writer.writerow(
                [cell.approach, cell.optimizer, repr(cell.d), repr(cell.e), cell.seed,
                 repr(cell.ssd), cell.error or ""]
            )
    return [str(p) for p in paths]


def read_ssd_table(path):
    """(header, rows) from fig8/fig9 files; numeric columns parsed to float/int."""
    with open(path, "r", encoding="ascii", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for rec in reader:
            rows.append(
                AggregateRow(
                    approach=rec[0],
                    optimizer=rec[1],
                    d=float(rec[2]),
                    e=float(rec[3]),
                    n_seeds=int(rec[4]),
                    ssd_median=float(rec[5]),
                    ssd_iqr=float(rec[6]),
                )
            )
    return header, rows


def read_sweep_cells(path):
    """The raw cells back from sweep_cells.csv (without kept fields)."""
    with open(path, "r", encoding="ascii", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        cells = []
        for rec in reader:
            cells.append(
                SweepCell(
                    approach=rec[0],
                    optimizer=rec[1],
                    d=float(rec[2]),
                    e=float(rec[3]),
                    seed=int(rec[4]),
                    ssd=float(rec[5]),
                    error=rec[6] or None,
                )
            )
    return cells


def read_timing_table(path):
    """(header, rows-as-lists) from table2_timing.csv, cells kept as strings."""
    with open(path, "r", encoding="ascii", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [rec for rec in reader]


def read_field_blocks(path):
    """List of (meta dict, values array) blocks from a field-block file."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    blocks = []
    i = 0
    while i < len(lines):
        meta = dict(item.split("=", 1) for item in lines[i].split(","))
        n = int(meta["grid"])
        values = np.asarray([[float(x) for x in lines[i + 1 + r].split(",")] for r in range(n)])
        blocks.append((meta, values))
        i += 1 + n
    return blocks
