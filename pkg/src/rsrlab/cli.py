"""``rsrlab`` command line: pretrain, robust-train, attack, eval, degrade, ablate."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import dataio
from .attack import AttackConfig, pgd_attack_batch
from .config import LOSS_CHOICES, RunConfig, load_config
from .dataio import PatchPair
from .errors import ConfigError, RSRError
from .metrics import MetricReport, evaluate
from .model import init_models, to_images, to_tensor
from .train import (LOG_COLUMNS, TrainState, load_bundle, load_checkpoint, new_train_state,
                    pretrain_clean, robust_train, save_checkpoint)

log = logging.getLogger("rsrlab")

RESOLVED_CONFIG = "resolved-config.ini"
TRAIN_LOG = "train_log.csv"
METRICS_CSV = "metrics.csv"
ABLATION_CSV = "ablation.csv"
PERCEP_LABEL = "percep (surrogate)"


# ---------------------------------------------------------------------------
# helpers


def _output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_CONFIG).write_text(cfg.dumps(), encoding="utf-8")
    return out


def _corpus(cfg: RunConfig, folder: str, count: int, stream: int) -> list[np.ndarray]:
    if folder:
        images = dataio.load_folder(folder)
        if not images:
            raise ConfigError(f"no PNG images in {folder}")
        return images
    seed = int(np.random.SeedSequence([cfg.corpus_seed, stream]).generate_state(1)[0])
    return dataio.synthetic_corpus(count, cfg.synthetic_size, seed, channels=cfg.channels)


def _pairs(cfg: RunConfig, images: Sequence[np.ndarray], limit: int) -> list[PatchPair]:
    pairs = dataio.build_pairs(images, cfg.hr_patch, cfg.scale, cfg.stride or cfg.hr_patch, limit)
    if not pairs:
        raise ConfigError("dataset produced no patches")
    return pairs


def train_set(cfg: RunConfig) -> list[PatchPair]:
    return _pairs(cfg, _corpus(cfg, cfg.train_dir, cfg.synthetic_train_images, 0), cfg.max_train_patches)


def eval_set(cfg: RunConfig, folder: str | None = None) -> list[PatchPair]:
    folder = cfg.eval_dir if folder is None else folder
    return _pairs(cfg, _corpus(cfg, folder, cfg.synthetic_eval_images, 1), cfg.max_eval_patches)


def _feature_weights(cfg: RunConfig):
    if not cfg.feature_weights:
        return None
    with np.load(cfg.feature_weights) as data:
        return {k: data[k] for k in data.files}


def new_bundle(cfg: RunConfig):
    return init_models(cfg.generator_config(), cfg.seed, dcfg=cfg.discriminator_config(),
                       feature_weights=_feature_weights(cfg))


class CsvLog:
    """Append-only training log."""

    def __init__(self, path: Path):
        self.path = path
        fresh = not path.exists() or path.stat().st_size == 0
        self.fh = open(path, "a", newline="", encoding="utf-8")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        if fresh:
            self.writer.writerow(LOG_COLUMNS)

    def __call__(self, row: dict) -> None:
        self.writer.writerow([row["iter"]] + [repr(float(row[k])) for k in LOG_COLUMNS[1:-1]]
                             + [f"{row['wall_time']:.3f}"])
        if row["iter"] % 50 == 0:
            self.fh.flush()
            log.info("iter %d  l1 %.4f  percep %.4f", row["iter"], row["l1"], row["percep"])

    def close(self) -> None:
        self.fh.close()


def _run_phase(cfg: RunConfig, state: TrainState, out: Path, phase: str, final_name: str) -> TrainState:
    tcfg = cfg.train_config(phase)
    data = train_set(cfg)
    logger = CsvLog(out / TRAIN_LOG)

    def checkpoint(st: TrainState) -> None:
        save_checkpoint(st, out / f"{phase}_{st.phase_iteration:06d}.ckpt")

    try:
        fn = pretrain_clean if phase == "pretrain" else robust_train
        fn(state, data, tcfg, log=logger, on_checkpoint=checkpoint)
    finally:
        logger.close()
    save_checkpoint(state, out / final_name)
    return state


# ---------------------------------------------------------------------------
# commands


def cmd_pretrain(cfg: RunConfig) -> int:
    cfg.check_paths("train_dir", "init_checkpoint", "feature_weights")
    out = _output_dir(cfg)
    if cfg.init_checkpoint:
        state = load_checkpoint(cfg.init_checkpoint)
    else:
        bundle = new_bundle(cfg)
        state = new_train_state(bundle, cfg.seed)
    _run_phase(cfg, state, out, "pretrain", "pretrained.ckpt")
    print(out / "pretrained.ckpt")
    return 0


def cmd_robust_train(cfg: RunConfig) -> int:
    if not cfg.init_checkpoint:
        raise ConfigError("robust-train needs init_checkpoint (a pretrained checkpoint)")
    cfg.check_paths("train_dir", "init_checkpoint")
    out = _output_dir(cfg)
    state = load_checkpoint(cfg.init_checkpoint)
    _run_phase(cfg, state, out, "robust", "robust.ckpt")
    print(out / "robust.ckpt")
    return 0


def _sidecar(path: Path, atk: AttackConfig, loss: float) -> None:
    path.write_text(
        f"epsilon = {atk.epsilon!r}\niters = {atk.iters}\nalpha = {atk.step!r}\n"
        f"structure_scale = {atk.structure_scale!r}\nuse_l1 = {str(atk.use_l1).lower()}\n"
        f"use_percep = {str(atk.use_percep).lower()}\nloss = {loss!r}\n",
        encoding="utf-8",
    )


def cmd_attack(cfg: RunConfig) -> int:
    if not cfg.init_checkpoint:
        raise ConfigError("attack needs init_checkpoint")
    cfg.check_paths("init_checkpoint", "input_dir", "eval_dir")
    out = _output_dir(cfg)
    bundle = load_bundle(cfg.init_checkpoint)
    atk = cfg.attack_config()
    pairs = eval_set(cfg, cfg.input_dir or None)
    adv_dir = out / "adversarial"
    adv_dir.mkdir(exist_ok=True)
    for i, pair in enumerate(pairs):
        rng = np.random.default_rng([cfg.seed, i])
        adv, loss = pgd_attack_batch(bundle, to_tensor(pair.lr, torch.float64),
                                     to_tensor(pair.hr, torch.float64), atk, rng,
                                     final_loss=atk.use_l1 or atk.use_percep)
        dataio.save_image(to_images(adv)[0], adv_dir / f"{i:06d}.png")
        _sidecar(adv_dir / f"{i:06d}.txt", atk, math.nan if loss is None else loss)
    print(adv_dir)
    return 0


def _print_report(report: MetricReport) -> None:
    print(f"{'corruption':<20} {'psnr_db':>9} {'ssim':>7} {PERCEP_LABEL:>20}")
    for name, agg in report.aggregates.items():
        print(f"{name:<20} {agg['psnr']:9.3f} {agg['ssim']:7.4f} {agg['percep']:20.5f}")


def cmd_eval(cfg: RunConfig) -> int:
    if not cfg.init_checkpoint:
        raise ConfigError("eval needs init_checkpoint")
    cfg.check_paths("init_checkpoint", "eval_dir")
    out = _output_dir(cfg)
    bundle = load_bundle(cfg.init_checkpoint)
    report = evaluate(bundle, eval_set(cfg), cfg.corruption_specs())
    report.to_csv(out / METRICS_CSV)
    _print_report(report)
    return 0


def cmd_degrade(cfg: RunConfig) -> int:
    if not cfg.input_dir:
        raise ConfigError("degrade needs input_dir")
    cfg.check_paths("input_dir")
    out = _output_dir(cfg)
    paths = dataio.list_pngs(cfg.input_dir)
    for spec in cfg.corruption_specs():
        target = out / "degraded" / spec.label.replace(":", "_")
        target.mkdir(parents=True, exist_ok=True)
        for i, p in enumerate(paths):
            seed = int(np.random.SeedSequence([spec.seed, i]).generate_state(1)[0])
            img = dataio.degrade(dataio.load_image(p), dataio.CorruptionSpec(spec.kind, spec.strength, seed))
            dataio.save_image(img, target / p.name)
    print(out / "degraded")
    return 0


def ablation_cells(cfg: RunConfig) -> list[tuple[str, dict]]:
    """Base cell followed by one cell per swept value, one axis at a time."""
    cells = [("base", {})]
    cells += [("epsilon", {"epsilon": e}) for e in cfg.sweep_epsilon]
    cells += [("iters", {"iters": n}) for n in cfg.sweep_iters]
    cells += [("structure", {"structure_scale": s}) for s in cfg.sweep_structure_scale]
    for name in cfg.sweep_loss:
        use_l1, use_percep = LOSS_CHOICES[name]
        cells.append(("loss", {"use_l1": use_l1, "use_percep": use_percep}))
    return cells


def _loss_name(cfg: RunConfig) -> str:
    return {v: k for k, v in LOSS_CHOICES.items()}[(cfg.use_l1, cfg.use_percep)]


def cmd_ablate(cfg: RunConfig) -> int:
    cfg.check_paths("train_dir", "eval_dir", "init_checkpoint")
    out = _output_dir(cfg)
    if cfg.init_checkpoint:
        base_ckpt = Path(cfg.init_checkpoint)
    else:
        base_ckpt = out / "pretrained.ckpt"
        bundle = new_bundle(cfg)
        _run_phase(cfg, new_train_state(bundle, cfg.seed), out, "pretrain", base_ckpt.name)
    data = train_set(cfg)
    evals = eval_set(cfg)
    specs = cfg.corruption_specs()
    names = [s.label for s in specs] or ["clean"]
    metric_cols = [f"{m}_{n}" for m in ("psnr", "ssim", "percep") for n in names + ["avg"]]
    header = ["axis", "epsilon", "iters", "structure", "loss"] + metric_cols

    cache: dict[tuple, list[float]] = {}
    with open(out / ABLATION_CSV, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        fh.flush()
        for axis, change in ablation_cells(cfg):
            cell = cfg.replace(**change)
            if cfg.ablate_iters:
                cell = cell.replace(robust_iters=cfg.ablate_iters)
            key = (cell.epsilon, cell.iters, cell.structure_scale, cell.use_l1, cell.use_percep)
            if key not in cache:
                log.info("ablation cell %s %s", axis, change)
                state = load_checkpoint(base_ckpt)
                robust_train(state, data, cell.train_config("robust"))
                report = evaluate(state.bundle, evals, specs)
                agg = report.aggregates
                values = []
                for m in ("psnr", "ssim", "percep"):
                    per = [agg[n][m] for n in names]
                    values += per + [float(np.mean(per))]
                cache[key] = values
            writer.writerow([axis, repr(cell.epsilon), cell.iters, repr(cell.structure_scale),
                             _loss_name(cell)] + [repr(v) for v in cache[key]])
            fh.flush()
    print(out / ABLATION_CSV)
    return 0


COMMANDS = {
    "pretrain": cmd_pretrain,
    "robust-train": cmd_robust_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "degrade": cmd_degrade,
    "ablate": cmd_ablate,
}


def _overrides(extra: Sequence[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}; overrides look like --key value")
        key, eq, value = tok[2:].partition("=")
        if not eq:
            if i + 1 >= len(extra) or extra[i + 1].startswith("--"):
                raise ConfigError(f"override --{key} has no value")
            value = extra[i + 1]
            i += 1
        out[key.replace("-", "_")] = value
        i += 1
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsrlab",
        description="Robust super-resolution via PGD adversarial training (desk scale).",
        epilog="Any config key may be overridden with --key value, e.g. --epsilon 14/255.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = load_config(args.config, _overrides(extra))
        return COMMANDS[args.command](cfg)
    except (RSRError, OSError, ValueError) as exc:
        print(f"rsrlab {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
