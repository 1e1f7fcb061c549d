"""Inverse prediction: from a requested plate separation back to a field.

An affine regression ties each search space (full field space, or a
generative model's latent space) to the separation d. Prediction then
runs fixed-step gradient descent on the squared scalar residual
(x.phi + c - d)^2 from a noisy initial estimate, and the latent result is
decoded back to a field.

The descent loop works coefficient by coefficient in plain Python on
purpose: its per-iteration cost is proportional to the search-space
dimension (441 fullspace vs 20 latent), which is exactly the cost
structure the timing benchmark measures. numpy calls at these sizes are
dominated by fixed per-call overhead and would flatten that ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import Dataset, FieldGrid
from .generative import GenerativeModel, encode, decode

__all__ = [
    "RegressionError",
    "InversionError",
    "SPACES",
    "RegressionModel",
    "InverseOptions",
    "InverseProblem",
    "InversePipeline",
    "fit_regression",
    "predict_d",
    "add_awgn",
    "inverse_predict",
    "fit_pipeline",
    "recover_field",
    "save_pipeline",
    "load_pipeline",
]

SPACES = ("fullspace", "latent")


class RegressionError(ValueError):
    """The affine fit is ill-posed for the given samples."""


class InversionError(RuntimeError):
    """Inverse prediction failed; carries the final scalar residual."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class RegressionModel:
    """Affine map d_hat = x.phi + intercept in one search space."""

    space: str
    phi: np.ndarray
    intercept: float
    fit_residual: float

    def __post_init__(self) -> None:
        if self.space not in SPACES:
            raise ValueError(f"unknown space {self.space!r}, expected one of {SPACES}")
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.phi.ndim != 1:
            raise ValueError("phi must be a 1-D vector")
        if not np.all(np.isfinite(self.phi)):
            raise ValueError("phi has non-finite entries")


def fit_regression(samples, targets, space: str) -> RegressionModel:
    """Least-squares affine fit of targets d against sample vectors.

    The fit is centered: the coefficient vector solves the mean-removed
    system (minimum-norm solution via SVD when underdetermined) and the
    intercept absorbs the means, so the intercept is never penalized.
    With constant targets this yields phi = 0 and intercept = mean(d).

    Raises RegressionError when fewer than two samples are given, or when
    all samples are identical while the targets vary (no affine map can
    separate them).
    """
    x = np.asarray(samples, dtype=np.float64)
    d = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2:
        raise RegressionError("samples must form a 2-D matrix")
    if d.ndim != 1 or d.shape[0] != x.shape[0]:
        raise RegressionError(f"{d.shape} targets for {x.shape[0]} samples")
    if x.shape[0] < 2:
        raise RegressionError(f"need at least 2 samples to fit, got {x.shape[0]}")
    x_mean = x.mean(axis=0)
    d_mean = d.mean()
    xc = x - x_mean
    dc = d - d_mean
    if not np.any(xc):
        if np.any(dc):
            raise RegressionError("rank collapse: samples are all identical but targets vary")
        phi = np.zeros(x.shape[1])
    else:
        phi, *_ = np.linalg.lstsq(xc, dc, rcond=None)
    intercept = float(d_mean - x_mean @ phi)
    resid = x @ phi + intercept - d
    return RegressionModel(
        space=space,
        phi=phi,
        intercept=intercept,
        fit_residual=float(np.sqrt(np.mean(resid * resid))),
    )


def predict_d(model: RegressionModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.phi.shape:
        raise ValueError(f"vector shape {x.shape} does not match coefficients {model.phi.shape}")
    return float(x @ model.phi + model.intercept)


def add_awgn(x, e: float, seed: int) -> np.ndarray:
    """x plus white Gaussian noise of variance e, from a fresh seeded generator.

    e = 0 returns an exact copy without consuming any randomness.
    """
    if e < 0.0:
        raise ValueError(f"noise variance must be nonnegative, got {e}")
    x = np.asarray(x, dtype=np.float64)
    if e == 0.0:
        return x.copy()
    rng = np.random.default_rng(seed)
    return x + rng.normal(0.0, math.sqrt(e), x.shape)


@dataclass(frozen=True)
class InverseOptions:
    """step_size None means the quadratic's natural step 0.5/(phi.phi)."""

    step_size: float | None = None
    residual_tol: float = 1e-8
    max_iterations: int = 10_000

    def __post_init__(self) -> None:
        if self.step_size is not None and self.step_size <= 0.0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.residual_tol <= 0.0:
            raise ValueError(f"residual_tol must be positive, got {self.residual_tol}")
        if self.max_iterations < 0:
            raise ValueError(f"max_iterations must be nonnegative, got {self.max_iterations}")


@dataclass
class InverseProblem:
    target_d: float
    initial_estimate: np.ndarray
    options: InverseOptions = field(default_factory=InverseOptions)

    def __post_init__(self) -> None:
        if not (0.0 <= self.target_d <= 1.0):
            raise ValueError(f"target separation must lie in [0, 1], got {self.target_d}")
        self.initial_estimate = np.asarray(self.initial_estimate, dtype=np.float64)
        if self.initial_estimate.ndim != 1:
            raise ValueError("initial estimate must be a 1-D vector")
        if not np.all(np.isfinite(self.initial_estimate)):
            raise ValueError("initial estimate has non-finite entries")


def inverse_predict(model: RegressionModel, problem: InverseProblem) -> np.ndarray:
    """Gradient descent on (x.phi + c - target)^2 from the initial estimate.

    Stops once |x.phi + c - target| < residual_tol; an initial estimate
    that already satisfies the target is returned unchanged. Raises
    InversionError carrying the final residual when max_iterations updates
    are not enough, and immediately when phi is all zero while the
    intercept misses the target (no update can change the prediction).
    """
    x_arr = problem.initial_estimate
    if x_arr.shape != model.phi.shape:
        raise ValueError(f"estimate shape {x_arr.shape} does not match coefficients {model.phi.shape}")
    opts = problem.options
    phi = [float(p) for p in model.phi]
    x = [float(t) for t in x_arr]
    pp = 0.0
    for p in phi:
        pp += p * p
    offset = model.intercept - problem.target_d
    if pp == 0.0:
        if abs(offset) < opts.residual_tol:
            return x_arr.copy()
        raise InversionError(
            f"infeasible: zero coefficient vector and intercept {model.intercept!r} "
            f"cannot reach target {problem.target_d!r}",
            residual=abs(offset),
            iterations=0,
        )
    step = 0.5 / pp if opts.step_size is None else opts.step_size

    r = offset
    for xi, p in zip(x, phi):
        r += xi * p
    iterations = 0
    while abs(r) >= opts.residual_tol:
        if iterations >= opts.max_iterations:
            raise InversionError(
                f"no convergence after {iterations} iterations (|residual| = {abs(r):.3e})",
                residual=abs(r),
                iterations=iterations,
            )
        s = 2.0 * step * r
        r = offset
        for i, p in enumerate(phi):
            xi = x[i] - s * p
            x[i] = xi
            r += xi * p
        iterations += 1
    return np.asarray(x, dtype=np.float64)


@dataclass
class InversePipeline:
    """Everything one approach needs to turn a target d into a field.

    anchor is the clean initial estimate in the search space: the training
    field nearest d = 0.5 for fullspace, that same field's encoding for
    latent. anchor_field keeps the underlying field either way so noise
    can alternatively be applied before encoding.
    """

    approach: str
    regression: RegressionModel
    anchor_d: float
    anchor: np.ndarray
    anchor_field: np.ndarray
    grid_n: int
    model: GenerativeModel | None = None
    optimizer_tag: str = "-"

    def __post_init__(self) -> None:
        if self.approach not in SPACES:
            raise ValueError(f"unknown approach {self.approach!r}, expected one of {SPACES}")
        self.anchor = np.asarray(self.anchor, dtype=np.float64)
        self.anchor_field = np.asarray(self.anchor_field, dtype=np.float64)
        if self.approach == "latent" and self.model is not None:
            if self.anchor.shape != (self.model.latent_dim,):
                raise ValueError("latent anchor width does not match the model's latent dimension")


def fit_pipeline(
    approach: str,
    dataset: Dataset,
    model: GenerativeModel | None = None,
    optimizer_tag: str = "-",
) -> InversePipeline:
    """Fit the affine regression for one approach on a training dataset.

    Latent features are the deterministic encoder means. The anchor
    sample is the training record whose d is nearest 0.5.
    """
    if approach not in SPACES:
        raise ValueError(f"unknown approach {approach!r}, expected one of {SPACES}")
    if len(dataset) == 0:
        raise ValueError("cannot fit a pipeline on an empty dataset")
    anchor_idx = int(np.argmin(np.abs(dataset.d - 0.5)))
    anchor_field = dataset.fields[anchor_idx].copy()
    if approach == "fullspace":
        features = dataset.fields
        anchor = anchor_field.copy()
    else:
        if model is None:
            raise ValueError("the latent approach requires a generative model")
        if model.input_dim != dataset.fields.shape[1]:
            raise ValueError(
                f"model input width {model.input_dim} does not match dataset width {dataset.fields.shape[1]}"
            )
        out = encode(model, dataset.fields)
        features = out if model.kind == "ae" else out[0]
        anchor = features[anchor_idx].copy()
    regression = fit_regression(features, dataset.d, space=approach)
    return InversePipeline(
        approach=approach,
        regression=regression,
        anchor_d=float(dataset.d[anchor_idx]),
        anchor=anchor,
        anchor_field=anchor_field,
        grid_n=dataset.grid_n,
        model=model,
        optimizer_tag=optimizer_tag,
    )


def recover_field(
    pipeline: InversePipeline,
    target_d: float,
    noise_e: float,
    seed: int,
    options: InverseOptions | None = None,
    corrupt_field_first: bool = False,
) -> FieldGrid:
    """Predict the (normalized) coarse field for target_d under noise.

    Noise of variance noise_e corrupts the clean initial estimate in the
    approach's own search space; corrupt_field_first=True instead corrupts
    the anchor field before encoding it (latent only; a no-op distinction
    for fullspace). noise_e = 0 keeps everything deterministic.
    """
    opts = options if options is not None else InverseOptions()
    if pipeline.approach == "fullspace":
        start = add_awgn(pipeline.anchor, noise_e, seed)
        solution = inverse_predict(pipeline.regression, InverseProblem(target_d, start, opts))
        values = solution
    else:
        if pipeline.model is None:
            raise ValueError("latent pipeline has no generative model attached")
        if corrupt_field_first:
            noisy = add_awgn(pipeline.anchor_field, noise_e, seed)
            out = encode(pipeline.model, noisy)
            start = out if pipeline.model.kind == "ae" else out[0]
        else:
            start = add_awgn(pipeline.anchor, noise_e, seed)
        solution = inverse_predict(pipeline.regression, InverseProblem(target_d, start, opts))
        values = decode(pipeline.model, solution)
    side = pipeline.grid_n
    return FieldGrid(values=values.reshape(side, side), units="normalized")


def _write_vector(fh, tag: str, vec: np.ndarray) -> None:
    fh.write(f"{tag} {vec.shape[0]}\n")
    fh.write(",".join(repr(float(v)) for v in vec) + "\n")


def save_pipeline(pipeline: InversePipeline, path) -> None:
    """Text dump of the regression artifact: space tag, coefficients,
    intercept, fit residual, plus the anchor records that make `invert`
    self-contained. The generative model is stored separately."""
    reg = pipeline.regression
    with open(path, "w", encoding="ascii") as fh:
        fh.write(
            f"regression space={pipeline.approach} grid={pipeline.grid_n} "
            f"optimizer={pipeline.optimizer_tag}\n"
        )
        fh.write(f"intercept={repr(float(reg.intercept))}\n")
        fh.write(f"fit_residual={repr(float(reg.fit_residual))}\n")
        fh.write(f"anchor_d={repr(float(pipeline.anchor_d))}\n")
        _write_vector(fh, "phi", reg.phi)
        _write_vector(fh, "anchor", pipeline.anchor)
        _write_vector(fh, "anchor_field", pipeline.anchor_field)


def load_pipeline(path, model: GenerativeModel | None = None) -> InversePipeline:
    """Read a save_pipeline artifact; attach the generative model if given."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("regression "):
        raise ValueError(f"{path}: not a regression artifact")
    head = dict(tok.split("=", 1) for tok in lines[0].split()[1:])
    scalars: dict[str, float] = {}
    vectors: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if not line:
            i += 1
            continue
        if "=" in line and " " not in line.split("=", 1)[0]:
            key, val = line.split("=", 1)
            scalars[key] = float(val)
            i += 1
        else:
            tag, count = line.split()
            vec = [float(v) for v in lines[i + 1].split(",")]
            if len(vec) != int(count):
                raise ValueError(f"{path}: vector {tag} has {len(vec)} entries, header says {count}")
            vectors[tag] = np.asarray(vec)
            i += 2
    try:
        space = head["space"]
        grid_n = int(head["grid"])
        optimizer_tag = head.get("optimizer", "-")
        regression = RegressionModel(
            space=space,
            phi=vectors["phi"],
            intercept=scalars["intercept"],
            fit_residual=scalars["fit_residual"],
        )
        return InversePipeline(
            approach=space,
            regression=regression,
            anchor_d=scalars["anchor_d"],
            anchor=vectors["anchor"],
            anchor_field=vectors["anchor_field"],
            grid_n=grid_n,
            model=model,
            optimizer_tag=optimizer_tag,
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing field {exc} in regression artifact") from exc
