"""Autoencoding generative models over flattened capacitor fields.

Both kinds pair a tanh-hidden encoder with a tanh-output decoder. The
plain autoencoder ("ae") uses a linear code head; the variational kind
("vae") doubles the head into mean and log-variance, draws one noise
vector per sample per step, and adds the closed-form Gaussian divergence
penalty to the reconstruction objective. Training losses are summed over
output coordinates and averaged over the minibatch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import (
    Mlp,
    TrainingError,
    backward,
    forward,
    make_optimizer,
    minibatch_stream,
    read_mlp_block,
    write_mlp_block,
)

__all__ = [
    "KINDS",
    "GenerativeModel",
    "GenerativeTrainConfig",
    "TrainHistory",
    "build_model",
    "encode",
    "decode",
    "sample_latent",
    "rec_loss",
    "kld_loss",
    "train_model",
    "train_generative",
    "save_model",
    "load_model",
]

KINDS = ("ae", "vae")


@dataclass
class GenerativeModel:
    kind: str
    encoder: Mlp
    decoder: Mlp
    latent_dim: int

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}, expected one of {KINDS}")
        if self.latent_dim < 1:
            raise ValueError(f"latent_dim must be positive, got {self.latent_dim}")
        head = self.latent_dim if self.kind == "ae" else 2 * self.latent_dim
        if self.encoder.layer_sizes[-1] != head:
            raise ValueError(
                f"{self.kind} encoder head width {self.encoder.layer_sizes[-1]} != expected {head}"
            )
        if self.decoder.layer_sizes[0] != self.latent_dim:
            raise ValueError(f"decoder input width {self.decoder.layer_sizes[0]} != latent_dim {self.latent_dim}")
        if self.decoder.layer_sizes[-1] != self.encoder.layer_sizes[0]:
            raise ValueError("decoder output width does not match encoder input width")

    @property
    def input_dim(self) -> int:
        return self.encoder.layer_sizes[0]


def build_model(kind: str, input_dim: int, hidden_dim: int, latent_dim: int, rng) -> GenerativeModel:
    """Fresh model with Glorot-uniform weights drawn from rng, encoder first."""
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}, expected one of {KINDS}")
    head = latent_dim if kind == "ae" else 2 * latent_dim
    encoder = Mlp.init((input_dim, hidden_dim, head), ("tanh", "linear"), rng)
    decoder = Mlp.init((latent_dim, hidden_dim, input_dim), ("tanh", "tanh"), rng)
    return GenerativeModel(kind=kind, encoder=encoder, decoder=decoder, latent_dim=latent_dim)


def _as_batch(arr, width: int, what: str):
    a = np.asarray(arr, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != width:
        raise ValueError(f"{what} must have width {width}, got shape {np.asarray(arr).shape}")
    return a, single


def encode(model: GenerativeModel, v):
    """Deterministic encoding: the code for "ae", (mu, sigma) for "vae".

    No sampling happens here; drawing a stochastic code is sample_latent's
    job. Accepts a single vector or a batch and mirrors the input's rank.
    """
    batch, single = _as_batch(v, model.input_dim, "field vector")
    out = forward(model.encoder, batch)[-1]
    if model.kind == "ae":
        return out[0] if single else out
    z = model.latent_dim
    mu = out[:, :z]
    sigma = np.exp(0.5 * out[:, z:])
    return (mu[0], sigma[0]) if single else (mu, sigma)


def decode(model: GenerativeModel, z, v0: float | None = None):
    """Map latent codes to fields in [-1, 1]; scale by v0 when given."""
    batch, single = _as_batch(z, model.latent_dim, "latent vector")
    out = forward(model.decoder, batch)[-1]
    if v0 is not None:
        if v0 <= 0.0:
            raise ValueError(f"v0 must be positive, got {v0}")
        out = out * v0
    return out[0] if single else out


def sample_latent(mu, sigma, noise_draw):
    """Reparameterized draw z = mu + sigma * noise."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    noise_draw = np.asarray(noise_draw, dtype=np.float64)
    if mu.shape != sigma.shape or mu.shape != noise_draw.shape:
        raise ValueError(f"shape mismatch: mu {mu.shape}, sigma {sigma.shape}, noise {noise_draw.shape}")
    return mu + sigma * noise_draw


def rec_loss(v, v_rec) -> float:
    """Half the summed squared reconstruction error."""
    v = np.asarray(v, dtype=np.float64)
    v_rec = np.asarray(v_rec, dtype=np.float64)
    if v.shape != v_rec.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs {v_rec.shape}")
    diff = v - v_rec
    return 0.5 * float(np.sum(diff * diff))


def kld_loss(mu, sigma) -> float:
    """Gaussian divergence from the unit prior: 0.5*sum(sigma^2 + mu^2 - ln sigma^2 - 1).

    Zero exactly at (mu, sigma) = (0, 1), positive everywhere else.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise ValueError(f"shape mismatch: mu {mu.shape} vs sigma {sigma.shape}")
    if np.any(sigma <= 0.0):
        raise ValueError("sigma must be positive elementwise")
    s2 = sigma * sigma
    return 0.5 * float(np.sum(s2 + mu * mu - np.log(s2) - 1.0))


def _ae_step(model: GenerativeModel, batch: np.ndarray):
    rows = batch.shape[0]
    enc_cache = forward(model.encoder, batch)
    dec_cache = forward(model.decoder, enc_cache[-1])
    diff = dec_cache[-1] - batch
    rec = 0.5 * float(np.sum(diff * diff)) / rows
    dw, db, g_code = backward(model.decoder, dec_cache, diff / rows)
    ew, eb, _ = backward(model.encoder, enc_cache, g_code)
    return rec, 0.0, ew + eb + dw + db


def _vae_step(model: GenerativeModel, batch: np.ndarray, eps: np.ndarray, beta: float):
    rows = batch.shape[0]
    z = model.latent_dim
    enc_cache = forward(model.encoder, batch)
    heads = enc_cache[-1]
    mu = heads[:, :z]
    lv = heads[:, z:]
    sigma = np.exp(0.5 * lv)
    code = mu + sigma * eps
    dec_cache = forward(model.decoder, code)
    diff = dec_cache[-1] - batch

    s2 = sigma * sigma
    rec = 0.5 * float(np.sum(diff * diff)) / rows
    kld = 0.5 * float(np.sum(s2 + mu * mu - lv - 1.0)) / rows

    dw, db, g_code = backward(model.decoder, dec_cache, diff / rows)
    # d code/d lv = sigma*eps/2; divergence terms: d/d mu = mu, d/d lv = (sigma^2 - 1)/2.
    g_mu = g_code + beta * mu / rows
    g_lv = g_code * (0.5 * sigma * eps) + beta * 0.5 * (s2 - 1.0) / rows
    ew, eb, _ = backward(model.encoder, enc_cache, np.concatenate([g_mu, g_lv], axis=1))
    return rec, kld, ew + eb + dw + db


@dataclass
class GenerativeTrainConfig:
    """Knobs for train_model / train_generative.

    learning_rate None picks the optimizer's paired default (1e-3 for
    adam, 1e-5 for momentum). draw_noise=False makes the vae latent
    deterministic (no generator draw at all), which only testing should
    want.
    """

    optimizer: str = "momentum"
    learning_rate: float | None = None
    max_iterations: int = 20_000
    minibatch_size: int = 20
    beta: float = 1.0
    latent_dim: int = 20
    hidden_dim: int = 200
    draw_noise: bool = True

    def __post_init__(self) -> None:
        if self.max_iterations < 0:
            raise ValueError(f"max_iterations must be nonnegative, got {self.max_iterations}")
        if self.minibatch_size < 1:
            raise ValueError(f"minibatch_size must be positive, got {self.minibatch_size}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")


@dataclass
class TrainHistory:
    """Per-iteration loss traces; total = rec + beta*kld (kld is all zero for ae)."""

    total: np.ndarray
    rec: np.ndarray
    kld: np.ndarray


def train_model(model: GenerativeModel, fields, config: GenerativeTrainConfig, rng) -> TrainHistory:
    """Train an existing model in place on (samples, input_dim) fields.

    Every random element (minibatch order, vae noise) draws from the one
    rng handed in, in a fixed order: batch indices first, then the noise
    for that step. Non-finite losses or gradients abort with
    TrainingError.
    """
    data = np.asarray(fields, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.input_dim:
        raise ValueError(f"training fields must have shape (samples, {model.input_dim}), got {data.shape}")
    if len(data) == 0:
        raise ValueError("training set is empty")

    params = [*model.encoder.weights, *model.encoder.biases, *model.decoder.weights, *model.decoder.biases]
    optimizer = make_optimizer(config.optimizer, config.learning_rate)
    stream = minibatch_stream(len(data), config.minibatch_size, rng)
    iters = config.max_iterations
    total = np.empty(iters)
    rec_hist = np.empty(iters)
    kld_hist = np.empty(iters)
    zero_eps = np.zeros((config.minibatch_size, model.latent_dim))
    for it in range(iters):
        batch = data[next(stream)]
        if model.kind == "ae":
            rec, kld, grads = _ae_step(model, batch)
        else:
            eps = rng.standard_normal((batch.shape[0], model.latent_dim)) if config.draw_noise else zero_eps
            rec, kld, grads = _vae_step(model, batch, eps, config.beta)
        loss = rec + config.beta * kld
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at iteration {it}")
        optimizer.step(params, grads)
        total[it] = loss
        rec_hist[it] = rec
        kld_hist[it] = kld
    return TrainHistory(total=total, rec=rec_hist, kld=kld_hist)


def train_generative(kind: str, fields, config: GenerativeTrainConfig | None = None, seed: int = 0):
    """Build and train a model from scratch; returns (model, history).

    Initialization, minibatch order and noise all flow from one generator
    seeded with seed, so a fixed seed reproduces the run bit for bit.
    """
    if config is None:
        config = GenerativeTrainConfig()
    data = np.asarray(fields, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("training fields must be 2-D")
    rng = np.random.default_rng(seed)
    model = build_model(kind, data.shape[1], config.hidden_dim, config.latent_dim, rng)
    history = train_model(model, data, config, rng)
    return model, history


def save_model(model: GenerativeModel, path) -> None:
    """Self-describing text dump: kind header, then encoder and decoder blocks."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"generative kind={model.kind} latent={model.latent_dim}\n")
        write_mlp_block(fh, model.encoder)
        write_mlp_block(fh, model.decoder)


def load_model(path) -> GenerativeModel:
    with open(path, "r", encoding="ascii") as fh:
        lines = iter(fh)
        try:
            head = next(lines).rstrip("\n")
        except StopIteration:
            raise ValueError(f"{path}: empty model file") from None
        if not head.startswith("generative "):
            raise ValueError(f"{path}: expected model header, got {head!r}")
        fields = dict(tok.split("=", 1) for tok in head.split()[1:])
        try:
            kind = fields["kind"]
            latent = int(fields["latent"])
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}: malformed model header {head!r}") from exc
        encoder = read_mlp_block(lines)
        decoder = read_mlp_block(lines)
    return GenerativeModel(kind=kind, encoder=encoder, decoder=decoder, latent_dim=latent)
