"""Command-line entry point: gen-world, train, eval, gradcheck, ablate.

Exit codes: 0 success, 1 verification failure, 2 invalid input,
3 incompatible inputs (format version or environment-count mismatch).
The VIPER_SEED environment variable overrides the seed in any config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import checks, evaluator, experiments, worldgen
from .embedder import CheckpointFormatError, init_params, load_checkpoint
from .trainer import PRESETS, TrainConfig, preset, run_sequence

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_INCOMPATIBLE = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _read_json(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(raw, dict):
        raise CliError(f"{path}: expected a JSON object")
    return raw


def _seed_override() -> int | None:
    value = os.environ.get("VIPER_SEED")
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise CliError(f"VIPER_SEED must be an integer, got {value!r}") from None


def _world_spec(path) -> worldgen.WorldSpec:
    """A world config must name every WorldSpec field; no config means all defaults."""
    raw = {} if path is None else _read_json(path)
    if path is not None:
        for f in fields(worldgen.WorldSpec):
            if f.name not in raw:
                raise CliError(f"world config is missing field {f.name!r}")
    seed = _seed_override()
    if seed is not None:
        raw["seed"] = seed
    try:
        return worldgen.WorldSpec.from_dict(raw) if raw else worldgen.WorldSpec()
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid world config: {exc}") from None


def _train_config(path, preset_name: str | None) -> TrainConfig:
    raw = {} if path is None else _read_json(path)
    version = raw.pop("config_version", experiments.CONFIG_VERSION)
    if version != experiments.CONFIG_VERSION:
        raise CliError(f"config version {version} is not supported (expected {experiments.CONFIG_VERSION})", EXIT_INCOMPATIBLE)
    name = raw.pop("preset", None) if preset_name is None else preset_name
    raw.pop("preset", None)
    try:
        cfg = TrainConfig.from_dict(raw)
        if name is not None:
            cfg = preset(name, cfg)
    except KeyError as exc:
        raise CliError(str(exc.args[0])) from None
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid train config: {exc}") from None
    seed = _seed_override()
    return cfg if seed is None else replace(cfg, seed=seed)


def _load_world(path) -> worldgen.Dataset:
    try:
        return worldgen.load(path)
    except OSError as exc:
        raise CliError(f"cannot read dataset {path}: {exc.strerror}") from None
    except worldgen.DatasetFormatError as exc:
        code = EXIT_INCOMPATIBLE if "version" in str(exc) else EXIT_INPUT
        raise CliError(f"{path}: {exc}", code) from None


def _print(msg: str = "") -> None:
    print(msg, flush=True)


# ----------------------------------------------------------------------
# verbs


def cmd_gen_world(args) -> int:
    spec = _world_spec(args.config)
    ds = worldgen.generate(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    worldgen.save(ds, out)
    digest = worldgen.content_hash(ds)
    experiments.write_manifest(
        out.with_name(out.name + ".manifest.json"), "gen-world", world=spec.to_dict(), seed=spec.seed, dataset_sha256=digest
    )
    _print(f"environments={spec.num_envs} places={spec.places_per_env} visits={spec.visits_per_place} observations={len(ds.observations)}")
    _print(f"sha256={digest}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _train_config(args.config, args.preset)
    ds = _load_world(args.world)
    if ds.spec.raw_channels != ds.observations[0].patches.shape[1]:
        raise CliError("dataset channel count disagrees with its spec", EXIT_INCOMPATIBLE)
    out = Path(args.out_dir)
    art = run_sequence(ds, cfg, out)
    experiments.write_manifest(
        out / "manifest.json",
        "train",
        config=cfg.to_dict(),
        seed=cfg.seed,
        dataset_sha256=worldgen.content_hash(ds),
        world=ds.spec.to_dict(),
        checkpoints=[p.name for p in art.checkpoints],
        skipped_steps=art.skipped_steps,
    )
    _print(f"trained {ds.num_envs} environments, {len(art.loss_log)} steps; checkpoints in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    ds = _load_world(args.world)
    ckpts = sorted(run_dir.glob("checkpoint_*.vipr"), key=lambda p: int(p.stem.split("_")[1]))
    if len(ckpts) != ds.num_envs:
        raise CliError(f"run has {len(ckpts)} checkpoints but the dataset has {ds.num_envs} environments", EXIT_INCOMPATIBLE)
    manifest_path = run_dir / "manifest.json"
    cfg = TrainConfig()
    if manifest_path.exists():
        manifest = _read_json(manifest_path)
        recorded = manifest.get("dataset_sha256")
        if recorded and recorded != worldgen.content_hash(ds):
            raise CliError("dataset does not match the one recorded in the run manifest", EXIT_INCOMPATIBLE)
        cfg = TrainConfig.from_dict(manifest.get("config", {}))
    models = []
    for path in ckpts:
        try:
            params, _ = load_checkpoint(path)
        except CheckpointFormatError as exc:
            code = EXIT_INCOMPATIBLE if "version" in str(exc) else EXIT_INPUT
            raise CliError(f"{path}: {exc}", code) from None
        models.append(params)
    baseline = init_params(
        raw_channels=ds.spec.raw_channels,
        channels=cfg.channels,
        aggregator=cfg.aggregator,
        clusters=cfg.clusters,
        out_dim=cfg.out_dim,
        gem_p=cfg.gem_p,
        seed=cfg.seed,
    )
    mat = evaluator.build_eval_matrix(models, ds, baseline=baseline)
    metrics = evaluator.summary_metrics(mat)
    out = Path(args.out)
    evaluator.emit_report(mat, metrics, out, experiments.config_digest(cfg))
    experiments.write_manifest(
        out / "manifest.json", "eval", config=cfg.to_dict(), seed=cfg.seed, dataset_sha256=worldgen.content_hash(ds), run_dir=str(run_dir)
    )
    _print(f"AP={metrics.ap:.4f} BWT={metrics.bwt:.4f} FWT={metrics.fwt:.4f}")
    if not evaluator.metrics_finite(metrics):
        _print("non-finite metric")
        return EXIT_VERIFY
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = checks.run_suite(seeds=args.seeds, tol=args.tol)
    for line in report.lines():
        _print(line)
    _print(f"{len(report.max_error)} operations, {args.seeds} seeds each, {report.seconds:.1f}s")
    if not report.passed:
        _print("gradient check failed: " + ", ".join(report.failures))
        return EXIT_VERIFY
    return EXIT_OK


def cmd_ablate(args) -> int:
    base = _train_config(args.config, None)
    ds = _load_world(args.world)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(experiments.DEFAULT_SEEDS)
    presets = args.presets.split(",") if args.presets else list(experiments.ABLATION_PRESETS)
    unknown = [p for p in presets if p not in PRESETS]
    if unknown:
        raise CliError(f"unknown preset(s): {', '.join(unknown)}")
    out = Path(args.out_dir)

    def progress(r):
        _print(f"{r.preset:14s} seed={r.seed} AP={r.summary.ap:.4f} BWT={r.summary.bwt:.4f} FWT={r.summary.fwt:.4f}")

    results = experiments.run_ablation(lambda _seed: ds, presets, seeds, base, out, progress)
    table = experiments.seed_averages(results)
    experiments.write_comparison(out / "comparison.csv", table)
    experiments.write_manifest(
        out / "manifest.json",
        "ablate",
        config=base.to_dict(),
        seeds=seeds,
        presets=presets,
        dataset_sha256=worldgen.content_hash(ds),
        world=ds.spec.to_dict(),
    )
    _print(f"comparison table written to {out / 'comparison.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="viper", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-world", help="generate a synthetic multi-environment dataset")
    p.add_argument("--config", help="WorldSpec JSON naming every field (default: built-in world)")
    p.add_argument("--out", required=True, help="dataset file to write")
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("train", help="train sequentially over every environment")
    p.add_argument("--config", help="TrainConfig JSON (missing fields take defaults)")
    p.add_argument("--preset", choices=list(PRESETS), help="apply a named preset on top of the config")
    p.add_argument("--world", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a run's checkpoints")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--world", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="run the finite-difference suite")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run every preset over shared seeds")
    p.add_argument("--config", help="base TrainConfig JSON")
    p.add_argument("--world", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", help="comma-separated seeds (default 0,1,2,3,4)")
    p.add_argument("--presets", help="comma-separated subset of presets")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except CliError as exc:
        print(f"viper {args.verb}: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"viper {args.verb}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
