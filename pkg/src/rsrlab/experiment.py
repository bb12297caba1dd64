"""Scaled-down baseline-vs-robust comparison on held-out corrupted inputs.

A clean model is pretrained once; a baseline then continues clean GAN
training while the robust model trains on PGD examples for the same number
of iterations, both from that shared checkpoint.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, replace

import numpy as np

from .attack import AttackConfig
from .dataio import CorruptionSpec, PatchPair, build_pairs, synthetic_corpus
from .metrics import MetricReport, evaluate
from .model import GeneratorConfig, init_models
from .train import TrainConfig, TrainState, new_train_state, pretrain_clean, robust_train

log = logging.getLogger(__name__)

EVAL_CORRUPTIONS = (
    CorruptionSpec("gaussian", 0.04, 0),
    CorruptionSpec("salt_pepper", 0.02, 0),
    CorruptionSpec("quantize", 16, 0),
)


@dataclass(frozen=True)
class ComparisonSetup:
    gcfg: GeneratorConfig = GeneratorConfig(num_blocks=2, base_channels=16, growth_channels=8)
    hr_patch: int = 64
    train_patches: int = 200
    eval_patches: int = 24
    corpus_size: int = 192
    pretrain_iters: int = 600
    l1_warmup_iters: int = 300
    robust_iters: int = 400
    batch_size: int = 8
    learning_rate: float = 1e-4
    attack: AttackConfig = AttackConfig()
    corpus_seed: int = 1234


@dataclass
class ComparisonResult:
    seed: int
    baseline: MetricReport
    robust: MetricReport


def make_data(setup: ComparisonSetup) -> tuple[list[PatchPair], list[PatchPair]]:
    n_train = -(-setup.train_patches // (setup.corpus_size // setup.hr_patch) ** 2)
    train_imgs = synthetic_corpus(n_train, setup.corpus_size, setup.corpus_seed)
    eval_imgs = synthetic_corpus(4, setup.corpus_size, setup.corpus_seed + 1)
    scale = setup.gcfg.scale
    return (build_pairs(train_imgs, setup.hr_patch, scale, limit=setup.train_patches),
            build_pairs(eval_imgs, setup.hr_patch, scale, limit=setup.eval_patches))


def pretrained_state(setup: ComparisonSetup, seed: int, train: list[PatchPair]) -> TrainState:
    bundle = init_models(replace(setup.gcfg, seed=seed), seed, hr_size=setup.hr_patch)
    state = new_train_state(bundle, seed)
    cfg = TrainConfig(learning_rate=setup.learning_rate, batch_size=setup.batch_size,
                      total_iters=setup.pretrain_iters, l1_warmup_iters=setup.l1_warmup_iters, seed=seed)
    return pretrain_clean(state, train, cfg)


def run_comparison(setup: ComparisonSetup, seed: int,
                   corruptions=EVAL_CORRUPTIONS) -> ComparisonResult:
    train, evals = make_data(setup)
    base_state = pretrained_state(setup, seed, train)
    results = {}
    for name, adv_fraction in (("baseline", 0.0), ("robust", 1.0)):
        state = copy.deepcopy(base_state)
        cfg = TrainConfig(learning_rate=setup.learning_rate, batch_size=setup.batch_size,
                          total_iters=setup.robust_iters, adv_fraction=adv_fraction,
                          attack=replace(setup.attack, seed=seed), seed=seed)
        robust_train(state, train, cfg)
        results[name] = evaluate(state.bundle, evals, corruptions)
        log.info("seed %d %s: %s", seed, name, results[name].aggregates)
    return ComparisonResult(seed, results["baseline"], results["robust"])


def summarize(results: list[ComparisonResult], corruptions=EVAL_CORRUPTIONS) -> dict:
    """Median-over-seeds per-corruption percep and PSNR-drop figures."""
    out = {}
    for spec in corruptions:
        name = spec.label
        rows = []
        for r in results:
            b, q = r.baseline.aggregates, r.robust.aggregates
            rows.append((
                b[name]["percep"], q[name]["percep"],
                b["clean"]["psnr"] - b[name]["psnr"],
                q["clean"]["psnr"] - q[name]["psnr"],
            ))
        arr = np.median(np.asarray(rows), axis=0)
        out[name] = {
            "baseline_percep": float(arr[0]), "robust_percep": float(arr[1]),
            "baseline_psnr_drop": float(arr[2]), "robust_psnr_drop": float(arr[3]),
        }
    return out
