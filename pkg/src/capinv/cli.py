"""Command-line front end: generate / train / invert / sweep / bench."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import experiments, fields, generative, inverse
from .network import DEFAULT_LEARNING_RATES, TrainingError

_USAGE_ERRORS = (
    fields.GeometryError,
    fields.ConvergenceError,
    TrainingError,
    inverse.RegressionError,
    inverse.InversionError,
    ValueError,
    OSError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capinv",
        description="Capacitor field generation, generative model training, and inverse field prediction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="solve capacitor fields and write a dataset")
    p.add_argument("--out", required=True, help="dataset file to write")
    p.add_argument("--d-min", type=float, default=0.1, help="smallest plate separation (default 0.1)")
    p.add_argument("--d-max", type=float, default=0.9, help="largest plate separation (default 0.9)")
    p.add_argument("--count", type=int, default=120, help="number of evenly spaced separations (default 120)")
    p.add_argument(
        "--test-set",
        action="store_true",
        help="ignore --d-min/--d-max/--count and build the benchmark evaluation set "
        f"(d = {', '.join(str(d) for d in fields.TEST_D)})",
    )
    p.add_argument("--a", type=float, default=0.25, help="left plate edge (default 0.25)")
    p.add_argument("--b", type=float, default=0.75, help="right plate edge (default 0.75)")
    p.add_argument("--v0", type=float, default=1.0, help="plate potential magnitude (default 1.0)")
    p.add_argument("--fine-n", type=int, default=401, help="solve resolution per side (default 401)")
    p.add_argument("--coarse-n", type=int, default=21, help="stored resolution per side (default 21)")
    p.add_argument("--omega", type=float, default=None, help="SOR relaxation factor (default: optimal for fine-n)")
    p.add_argument("--tol", type=float, default=None, help="SOR stopping tolerance (default 1e-6 * v0)")
    p.add_argument("--max-sweeps", type=int, default=100_000, help="SOR sweep budget (default 100000)")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train a generative model on a dataset")
    p.add_argument("--kind", required=True, choices=generative.KINDS, help="model kind")
    p.add_argument("--data", required=True, help="training dataset (from `capinv generate`)")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--optimizer", choices=sorted(DEFAULT_LEARNING_RATES), default="momentum",
                   help="optimizer (default momentum)")
    p.add_argument("--lr", type=float, default=None,
                   help="learning rate (default: 1e-3 for adam, 1e-5 for momentum)")
    p.add_argument("--iters", type=int, default=20_000, help="training iterations (default 20000)")
    p.add_argument("--batch", type=int, default=20, help="minibatch size (default 20)")
    p.add_argument("--latent", type=int, default=20, help="latent width (default 20)")
    p.add_argument("--hidden", type=int, default=200, help="hidden width (default 200)")
    p.add_argument("--beta", type=float, default=1.0, help="divergence weight for vae (default 1.0)")
    p.add_argument("--seed", type=int, default=0, help="training seed (default 0)")
    p.add_argument("--history", default=None,
                   help="loss history file (default: <out>.history.csv)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("invert", help="recover a field for a target separation")
    p.add_argument("--approach", required=True, choices=inverse.SPACES, help="search space")
    p.add_argument("--model", default=None, help="generative model file (required for latent)")
    p.add_argument("--regression", default=None, help="fitted regression artifact to load")
    p.add_argument("--data", default=None,
                   help="training dataset: fit the regression on the fly instead of --regression")
    p.add_argument("--save-regression", default=None,
                   help="with --data: write the fitted regression artifact here")
    p.add_argument("--d", type=float, required=True, help="target separation")
    p.add_argument("--noise", type=float, default=0.0, help="noise variance on the initial estimate (default 0)")
    p.add_argument("--seed", type=int, default=0, help="noise seed (default 0)")
    p.add_argument("--corrupt-field-first", action="store_true",
                   help="latent only: corrupt the anchor field before encoding instead of the code")
    p.add_argument("--out", required=True, help="recovered field file to write")
    p.set_defaults(func=_cmd_invert)

    p = sub.add_parser(
        "sweep",
        help="run the noise sweep described by a config file",
        epilog="config keys: train_data, test_data, out_dir (required); approaches "
        "(comma list, default fullspace); model_<name>= and optimizer_<name>= per "
        "latent approach; noise_levels, test_d, seeds, keep_fields_d (comma lists); "
        "timing_reps (0 disables timing), timing_warmup; corrupt_field_first.",
    )
    p.add_argument("--config", required=True, help="key=value config file (one pair per line, # comments)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("bench", help="time the pipeline stages per approach")
    p.add_argument("--data", required=True, help="training dataset")
    p.add_argument("--ae-model", default=None, help="autoencoder model file")
    p.add_argument("--vae-model", default=None, help="variational model file")
    p.add_argument("--reps", type=int, default=100, help="timing repetitions (default 100)")
    p.add_argument("--warmup", type=int, default=10, help="warmup calls per stage (default 10)")
    p.add_argument("--target-d", type=float, default=0.36, help="separation used for the inverse stage")
    p.add_argument("--out", required=True, help="timing table to write")
    p.set_defaults(func=_cmd_bench)
    return parser


def _cmd_generate(args) -> int:
    if args.test_set:
        d_values = fields.TEST_D
    else:
        if args.count < 1:
            raise ValueError(f"--count must be positive, got {args.count}")
        if args.d_min > args.d_max:
            raise ValueError(f"--d-min {args.d_min} exceeds --d-max {args.d_max}")
        d_values = np.linspace(args.d_min, args.d_max, args.count)
    dataset = fields.generate_dataset(
        d_values,
        a=args.a,
        b=args.b,
        v0=args.v0,
        fine_n=args.fine_n,
        coarse_n=args.coarse_n,
        omega=args.omega,
        tol=args.tol,
        max_sweeps=args.max_sweeps,
    )
    fields.save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} fields ({dataset.grid_n}x{dataset.grid_n}) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    dataset = fields.load_dataset(args.data)
    config = generative.GenerativeTrainConfig(
        optimizer=args.optimizer,
        learning_rate=args.lr,
        max_iterations=args.iters,
        minibatch_size=args.batch,
        beta=args.beta,
        latent_dim=args.latent,
        hidden_dim=args.hidden,
    )
    model, history = generative.train_generative(args.kind, dataset.fields, config, seed=args.seed)
    generative.save_model(model, args.out)
    history_path = args.history if args.history is not None else f"{args.out}.history.csv"
    with open(history_path, "w", encoding="ascii") as fh:
        fh.write("iteration,total,rec,kld\n")
        for i in range(len(history.total)):
            fh.write(
                f"{i},{float(history.total[i])!r},{float(history.rec[i])!r},{float(history.kld[i])!r}\n"
            )
    final = history.total[-1] if len(history.total) else float("nan")
    print(f"trained {args.kind} for {args.iters} iterations (final loss {final:.6g})")
    print(f"wrote model to {args.out} and loss history to {history_path}")
    return 0


def _cmd_invert(args) -> int:
    if (args.regression is None) == (args.data is None):
        raise ValueError("pass exactly one of --regression or --data")
    if args.save_regression is not None and args.data is None:
        raise ValueError("--save-regression needs --data")
    model = None
    if args.approach == "latent":
        if args.model is None:
            raise ValueError("the latent approach requires --model")
        model = generative.load_model(args.model)
    if args.data is not None:
        dataset = fields.load_dataset(args.data)
        pipeline = inverse.fit_pipeline(args.approach, dataset, model=model)
        if args.save_regression is not None:
            inverse.save_pipeline(pipeline, args.save_regression)
    else:
        pipeline = inverse.load_pipeline(args.regression, model=model)
        if pipeline.approach != args.approach:
            raise ValueError(
                f"regression artifact was fitted for {pipeline.approach!r}, not {args.approach!r}"
            )
    grid = inverse.recover_field(
        pipeline, args.d, args.noise, args.seed, corrupt_field_first=args.corrupt_field_first
    )
    with open(args.out, "w", encoding="ascii") as fh:
        meta = {
            "approach": args.approach,
            "optimizer": pipeline.optimizer_tag,
            "d": repr(args.d),
            "e": repr(args.noise),
            "seed": args.seed,
            "grid": grid.n,
        }
        experiments.write_field_block(fh, meta, grid.values)
    print(f"wrote recovered {grid.n}x{grid.n} field to {args.out}")
    return 0


_SWEEP_KEYS = {
    "train_data", "test_data", "out_dir", "approaches", "noise_levels", "test_d",
    "seeds", "keep_fields_d", "timing_reps", "timing_warmup", "corrupt_field_first",
}


def _parse_sweep_config(path) -> dict:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="ascii").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if key not in _SWEEP_KEYS and not key.startswith("model_") and not key.startswith("optimizer_"):
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = val.strip()
    for required in ("train_data", "test_data", "out_dir"):
        if required not in values:
            raise ValueError(f"{path}: missing required key {required!r}")
    return values


def _floats(text: str) -> tuple:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _cmd_sweep(args) -> int:
    cfg = _parse_sweep_config(args.config)
    train_set = fields.load_dataset(cfg["train_data"])
    test_set = fields.load_dataset(cfg["test_data"])
    names = [tok.strip() for tok in cfg.get("approaches", "fullspace").split(",") if tok.strip()]
    pipelines = {}
    for name in names:
        if name == "fullspace":
            pipelines[name] = inverse.fit_pipeline(
                "fullspace", train_set, optimizer_tag=cfg.get("optimizer_fullspace", "-")
            )
            continue
        model_key = f"model_{name}"
        if model_key not in cfg:
            raise ValueError(f"approach {name!r} needs a {model_key}= entry in the config")
        model = generative.load_model(cfg[model_key])
        tag = cfg.get(f"optimizer_{name}", "momentum")
        pipelines[name] = inverse.fit_pipeline("latent", train_set, model=model, optimizer_tag=tag)
    sweep_config = experiments.SweepConfig(
        noise_levels=_floats(cfg.get("noise_levels", "0.01,0.1,0.5,1.0")),
        test_d=_floats(cfg.get("test_d", ",".join(str(d) for d in fields.TEST_D))),
        seeds=tuple(int(s) for s in cfg.get("seeds", "0,1,2,3,4").split(",") if s.strip()),
        keep_fields_d=_floats(cfg.get("keep_fields_d", "0.36")),
        corrupt_field_first=cfg.get("corrupt_field_first", "false").lower() in ("true", "1", "yes"),
    )
    result = experiments.run_noise_sweep(sweep_config, pipelines, test_set)
    reps = int(cfg.get("timing_reps", "100"))
    timing = None
    if reps > 0:
        timing = experiments.run_timing(
            pipelines, train_set, repetitions=reps, warmup=int(cfg.get("timing_warmup", "10"))
        )
    paths = experiments.export_results(result, cfg["out_dir"], timing=timing)
    failures = sum(1 for cell in result.cells if cell.error is not None)
    print(f"swept {len(result.cells)} cells ({failures} failed); wrote:")
    for p in paths:
        print(f"  {p}")
    return 0


def _cmd_bench(args) -> int:
    dataset = fields.load_dataset(args.data)
    pipelines = {"fullspace": inverse.fit_pipeline("fullspace", dataset)}
    if args.ae_model is not None:
        pipelines["ae"] = inverse.fit_pipeline(
            "latent", dataset, model=generative.load_model(args.ae_model), optimizer_tag="-"
        )
    if args.vae_model is not None:
        pipelines["vae"] = inverse.fit_pipeline(
            "latent", dataset, model=generative.load_model(args.vae_model), optimizer_tag="-"
        )
    timing = experiments.run_timing(
        pipelines, dataset, repetitions=args.reps, warmup=args.warmup, target_d=args.target_d
    )
    experiments.write_timing_table(timing, args.out)
    for row in timing.rows:
        print(
            f"{row.approach}: dim={row.space_dim} inverse={row.inverse_ms:.4f} ms "
            f"(median of {timing.repetitions})"
        )
    print(f"wrote timing table to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
