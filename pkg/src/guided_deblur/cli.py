"""Command-line entry point: gen-data, train, sample, sweep, eval.

Config precedence is defaults < config file < flags; the seed
additionally reads DEBLUR_SEED from the environment below file level.
Every run writes a run.json provenance record into the output directory
and drops a `.incomplete` marker there until it finishes cleanly.
Failures exit nonzero with a single `error: ...` line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import torch

from . import __version__, blur, images, metrics, sampling, training
from .denoiser import normalize_mode

ENV_SEED = "DEBLUR_SEED"


@dataclass(frozen=True)
class GenDataConfig:
    """Flat schema for gen-data config files."""

    base: str = "train"  # named blur config to start from: train | shifted
    seed: int = -1  # -1 keeps the base config's seed
    size: int = 64
    length_min: float = -1.0
    length_max: float = -1.0
    angle_min: float = 0.0
    angle_max: float = math.pi
    noise_std: float = -1.0


class CliError(RuntimeError):
    pass


def _resolve_seed(cfg_seed: int | None, file_has_seed: bool, flag_seed: int | None) -> int | None:
    if flag_seed is not None:
        return flag_seed
    if file_has_seed:
        return cfg_seed
    env = os.environ.get(ENV_SEED)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"{ENV_SEED} must be an integer, got {env!r}")
    return cfg_seed


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _write_run_record(out_dir: Path, command: str, config: dict, seed: int) -> None:
    record = {
        "command": command,
        "config": config,
        "config_hash": _config_hash(config),
        "seed": seed,
        "code_version": __version__,
    }
    with open(out_dir / "run.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)


class _OutputDir:
    """Creates the output dir; its `.incomplete` marker survives failures."""

    def __init__(self, path):
        self.path = Path(path)

    def __enter__(self) -> Path:
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / ".incomplete").touch()
        return self.path

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is None:
            marker = self.path / ".incomplete"
            if marker.exists():
                marker.unlink()
        return False


def _cmd_gen_data(args) -> int:
    file_values = {}
    if args.config:
        file_values = training.parse_config_file(args.config, schema=GenDataConfig)
    gcfg = GenDataConfig(**file_values)
    if gcfg.base not in blur.NAMED_CONFIGS:
        raise CliError(f"unknown base blur config {gcfg.base!r}; expected train or shifted")
    base = blur.NAMED_CONFIGS[gcfg.base]

    seed = _resolve_seed(
        gcfg.seed if gcfg.seed >= 0 else base.seed, gcfg.seed >= 0, args.seed
    )
    length_range = (
        gcfg.length_min if gcfg.length_min >= 0 else base.length_range[0],
        gcfg.length_max if gcfg.length_max >= 0 else base.length_range[1],
    )
    config = blur.GenerationConfig(
        seed=seed,
        size=gcfg.size,
        length_range=length_range,
        angle_range=(gcfg.angle_min, gcfg.angle_max),
        noise_std=gcfg.noise_std if gcfg.noise_std >= 0 else base.noise_std,
    )
    with _OutputDir(args.out) as out:
        dataset = blur.make_dataset(config, args.n)
        blur.save_dataset(dataset, out)
        payload = dataclasses.asdict(config)
        payload["n"] = args.n
        _write_run_record(out, "gen-data", payload, seed)
        print(f"wrote {args.n} pairs to {out}")
    return 0


def _train_config_from_args(args) -> training.TrainConfig:
    file_values = {}
    if args.config:
        file_values = training.parse_config_file(args.config)
    overrides = {}
    if args.mode is not None:
        overrides["injection_mode"] = normalize_mode(args.mode)
    if args.no_guidance_loss:
        overrides["guidance_loss_enabled"] = False
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.data is not None:
        overrides["data_dir"] = args.data
    seed = _resolve_seed(
        file_values.get("seed", training.PRESETS[args.preset].seed),
        "seed" in file_values,
        args.seed,
    )
    overrides["seed"] = seed
    return training.config_from_sources(args.preset, file_values, overrides)


def _cmd_train(args) -> int:
    cfg = _train_config_from_args(args)
    if not cfg.data_dir:
        raise CliError("train requires a dataset (--data or data_dir in the config)")
    dataset = blur.load_dataset(cfg.data_dir)
    with _OutputDir(args.out) as out:
        _write_run_record(out, "train", dataclasses.asdict(cfg), cfg.seed)
        state = training.init_state(cfg)
        records = training.train(state, dataset, log_every=args.log_every)
        training.save_checkpoint(state, out / "checkpoint.bin")
        with open(out / "loss_log.csv", "w") as fh:
            fh.write(
                "iteration,guidance_1,guidance_2,guidance_3,guidance,denoise,"
                "lambda,lr,total,objective\n"
            )
            for r in records:
                g1, g2, g3 = r.guidance_per_scale
                fh.write(
                    f"{r.iteration},{g1:.6f},{g2:.6f},{g3:.6f},{r.guidance_total:.6f},"
                    f"{r.denoise:.6f},{r.lam:.4f},{r.lr:.2e},{r.total:.6f},{r.objective:.6f}\n"
                )
        print(f"trained {len(records)} iterations; checkpoint at {out / 'checkpoint.bin'}")
    return 0


def _sampler_config_from_args(args, seed: int) -> sampling.SamplerConfig:
    return sampling.SamplerConfig(
        steps=args.steps if args.steps is not None else 100,
        max_var=args.max_var if args.max_var is not None else 0.1,
        seed=seed,
        n_samples=args.n_samples if args.n_samples is not None else 1,
    )


def _cmd_sample(args) -> int:
    state = training.load_checkpoint(args.checkpoint)
    seed = _resolve_seed(0, False, args.seed)
    cfg = _sampler_config_from_args(args, seed)
    with _OutputDir(args.out) as out:
        payload = dataclasses.asdict(cfg)
        payload["checkpoint"] = str(args.checkpoint)
        payload["inputs"] = [str(p) for p in args.inputs]
        _write_run_record(out, "sample", payload, seed)
        for path in args.inputs:
            y = images.load_image(path)
            restored = sampling.sample_average(state, y, cfg)
            images.save_image(restored, out / Path(path).name)
        print(f"deblurred {len(args.inputs)} image(s) into {out}")
    return 0


def _cmd_sweep(args) -> int:
    state = training.load_checkpoint(args.checkpoint)
    seed = _resolve_seed(0, False, args.seed)
    dataset = blur.load_dataset(args.data)
    grid = None  # the default 19-combination grid
    if (args.steps is None) != (args.max_var is None):
        raise CliError("--steps and --max-var must be given together")
    if args.steps is not None:
        grid = [(args.steps, args.max_var)]
    with _OutputDir(args.out) as out:
        payload = {"checkpoint": str(args.checkpoint), "data": str(args.data), "grid": grid}
        _write_run_record(out, "sweep", payload, seed)
        records = sampling.grid_sweep(state, dataset, grid=grid, seed=seed, out_dir=out)
        sampling.write_sweep_csv(records, out / "sweep_records.csv")
        metrics.sweep_report(records, out)
        print(f"swept {len(records)} (config, image) combinations into {out}")
    return 0


def _cmd_eval(args) -> int:
    dir_a, dir_b = Path(args.dir_a), Path(args.dir_b)
    names = sorted(p.name for p in dir_a.glob("*.png"))
    if not names:
        raise CliError(f"no PNG files in {dir_a}")
    pairs = []
    for name in names:
        other = dir_b / name
        if not other.exists():
            raise CliError(f"{other} missing; directories must hold matching filenames")
        pairs.append((dir_a / name, other))
    with _OutputDir(args.out) as out:
        payload = {"dir_a": str(dir_a), "dir_b": str(dir_b), "files": names}
        _write_run_record(out, "eval", payload, 0)
        rows = []
        for pa, pb in pairs:
            a, b = images.load_image(pa), images.load_image(pb)
            rows.append((pa.name, metrics.psnr(a, b), metrics.ssim(a, b)))
        with open(out / "eval.csv", "w") as fh:
            fh.write("image,psnr,ssim\n")
            for name, p, s in rows:
                fh.write(f"{name},{p:.6f},{s:.6f}\n")
        mean_psnr = sum(r[1] for r in rows) / len(rows)
        mean_ssim = sum(r[2] for r in rows) / len(rows)
        print(f"mean_psnr={mean_psnr:.6f} mean_ssim={mean_ssim:.6f} n={len(rows)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guided-deblur",
        description="Structure-guided diffusion deblurring pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic sharp/blurry dataset")
    gen.add_argument("--config", help="gen-data config file (key = value)")
    gen.add_argument("--n", type=int, default=8, help="number of pairs")
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--seed", type=int)
    gen.set_defaults(func=_cmd_gen_data)

    tr = sub.add_parser("train", help="train guidance + denoiser on a dataset")
    tr.add_argument("--config", help="training config file (key = value)")
    tr.add_argument("--preset", choices=sorted(training.PRESETS), default="micro")
    tr.add_argument("--data", help="dataset directory (overrides config data_dir)")
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--iterations", type=int)
    tr.add_argument("--mode", choices=["addition", "concat", "adanorm", "none"])
    tr.add_argument(
        "--no-guidance-loss",
        action="store_true",
        help="disable the multiscale regression loss (ablation hook)",
    )
    tr.add_argument("--log-every", type=int, default=100)
    tr.set_defaults(func=_cmd_train)

    sa = sub.add_parser("sample", help="deblur PNGs with a trained checkpoint")
    sa.add_argument("--checkpoint", required=True)
    sa.add_argument("--out", required=True)
    sa.add_argument("--seed", type=int)
    sa.add_argument("--steps", type=int)
    sa.add_argument("--max-var", type=float, dest="max_var")
    sa.add_argument("--n-samples", type=int, dest="n_samples")
    sa.add_argument("inputs", nargs="+", help="blurry PNG files")
    sa.set_defaults(func=_cmd_sample)

    sw = sub.add_parser("sweep", help="run the (steps, max_var) sampler grid")
    sw.add_argument("--checkpoint", required=True)
    sw.add_argument("--data", required=True, help="dataset directory")
    sw.add_argument("--out", required=True)
    sw.add_argument("--seed", type=int)
    sw.add_argument("--steps", type=int, help="restrict the sweep to one combination")
    sw.add_argument("--max-var", type=float, dest="max_var")
    sw.set_defaults(func=_cmd_sweep)

    ev = sub.add_parser("eval", help="PSNR/SSIM between matching PNGs in two directories")
    ev.add_argument("dir_a")
    ev.add_argument("dir_b")
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=_cmd_eval)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        CliError,
        ValueError,
        OSError,
        training.CheckpointError,
        training.TrainingDiverged,
        sampling.SamplingDiverged,
        images.ImageError,
    ) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    # Small models on few cores: single-threaded is both fastest and
    # the most reproducible configuration.
    torch.set_num_threads(1)
    sys.exit(run())


if __name__ == "__main__":
    main()
