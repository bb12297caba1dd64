"""Acceptance criteria, one test per criterion.

Each test prints a ``criterion N PASS/FAIL`` line; the lines are repeated in
the pytest terminal summary.  Criteria 3, 4, 6 and 7 train models and are
marked ``slow``.
"""

import csv
import math
import time

import numpy as np
import pytest
import torch

from rsrlab import cli
from rsrlab.attack import AttackConfig, attack_loss, pgd_attack, pgd_attack_batch, random_noise_input
from rsrlab.dataio import build_pairs, synthetic_corpus
from rsrlab.experiment import ComparisonSetup, run_comparison, summarize
from rsrlab.losses import LossWeights, gan_loss_d, gan_loss_g, l1_loss, perceptual_loss, total_g_loss
from rsrlab.metrics import psnr, ssim
from rsrlab.model import bundle_checksum
from rsrlab.train import TrainConfig, load_bundle, new_train_state, pretrain_clean, stack_pairs

from .conftest import grad_check, tiny_bundle
from .test_metrics import oracle_ssim


def test_criterion_1_constraint_suite(criterion):
    t0 = time.perf_counter()
    bundle = tiny_bundle()
    r = np.random.default_rng(2024)
    violations = 0
    calls = 1000
    for k in range(calls):
        eps = float(r.uniform(0, 0.1))
        cfg = AttackConfig(epsilon=eps, iters=int(r.integers(0, 9)), structure_scale=float(r.uniform(1, 2)),
                           use_l1=bool(r.integers(0, 2)), use_percep=True, seed=k)
        lr = r.random((8, 8, 3))
        # push some pixels onto the image bounds so the [0, 1] clamp is exercised
        lr[r.random(lr.shape) < 0.1] = 0.0
        lr[r.random(lr.shape) < 0.1] = 1.0
        hr = r.random((32, 32, 3))
        adv = pgd_attack(bundle, lr, hr, cfg)
        if np.abs(adv - lr).max() > eps + 1e-9 or adv.min() < 0 or adv.max() > 1:
            violations += 1
    elapsed = time.perf_counter() - t0
    criterion(1, "PGD outputs stay in the eps-ball and [0, 1]", violations == 0 and elapsed < 300,
              f"{calls - violations}/{calls} feasible, {elapsed:.1f}s")


def test_criterion_2_gradient_suite(criterion, rng):
    t0 = time.perf_counter()
    b = tiny_bundle(dtype=torch.float64)
    lr = torch.from_numpy(rng.random((1, 3, 8, 8)))
    hr = torch.from_numpy(rng.random((1, 3, 32, 32)))
    sr = torch.from_numpy(rng.random((1, 3, 32, 32)))
    probe = [torch.from_numpy(rng.standard_normal(m.shape[1:])) for m in b.feature_net(hr)]
    real = torch.from_numpy(rng.normal(size=6))
    fake = torch.from_numpy(rng.normal(size=6))
    comps = torch.from_numpy(rng.random(3))
    checks = {
        "generator": (lambda t: b.generator(t).mean(), lr),
        "discriminator": (lambda t: b.discriminator(t).sum(), hr),
        "feature extractor": (lambda t: sum((w * m[0]).sum() for w, m in zip(probe, b.feature_net(t))), hr),
        "l1": (lambda t: l1_loss(t, hr), sr),
        "perceptual": (lambda t: perceptual_loss(b.feature_net, t, hr), sr),
        "gan_g/real": (lambda t: gan_loss_g(t, fake), real),
        "gan_g/fake": (lambda t: gan_loss_g(real, t), fake),
        "gan_d/real": (lambda t: gan_loss_d(t, fake), real),
        "gan_d/fake": (lambda t: gan_loss_d(real, t), fake),
        "total_g": (lambda t: total_g_loss(LossWeights(), t[0], t[1], t[2]), comps),
        "attack": (lambda t: attack_loss(b, t, hr, AttackConfig()), lr),
    }
    errors = {name: grad_check(f, x, rng, points=5) for name, (f, x) in checks.items()}
    worst = max(errors, key=errors.get)
    elapsed = time.perf_counter() - t0
    criterion(2, "finite-difference gradient checks", errors[worst] <= 1e-3 and elapsed < 120,
              f"worst {worst} rel err {errors[worst]:.2e}, {elapsed:.1f}s")


def test_criterion_5_metric_oracles(criterion):
    t0 = time.perf_counter()
    r = np.random.default_rng(55)
    worst_psnr = worst_ssim = 0.0
    for _ in range(100):
        a = r.random((16, 16, 3))
        b = np.clip(a + r.normal(0, r.uniform(0.01, 0.3), a.shape), 0, 1)
        mse = np.sum((a - b) ** 2) / a.size
        worst_psnr = max(worst_psnr, abs(psnr(a, b) - 10 * math.log10(1 / mse)))
        worst_ssim = max(worst_ssim, abs(ssim(a, b) - oracle_ssim(a, b)))
    half = psnr(np.zeros((8, 8, 3)), np.full((8, 8, 3), 0.5))
    elapsed = time.perf_counter() - t0
    ok = worst_psnr <= 1e-9 and worst_ssim <= 1e-6 and abs(half - 6.0206) <= 1e-4 and elapsed < 60
    criterion(5, "PSNR/SSIM agree with brute-force oracles", ok,
              f"psnr err {worst_psnr:.1e}, ssim err {worst_ssim:.1e}, half-offset {half:.4f} dB, {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_3_attack_effectiveness(criterion):
    t0 = time.perf_counter()
    train = build_pairs(synthetic_corpus(8, 64, seed=31), 32, 4)
    held = build_pairs(synthetic_corpus(8, 64, seed=32), 32, 4, limit=32)
    state = new_train_state(tiny_bundle(seed=0), 0)
    pretrain_clean(state, train, TrainConfig(total_iters=300, l1_warmup_iters=150, batch_size=8,
                                             learning_rate=1e-3))
    bundle = state.bundle
    lr, hr = stack_pairs(held)
    cfg = AttackConfig()
    wins = 0
    trials = 20
    for trial in range(trials):
        rng = np.random.default_rng(trial)
        adv, _ = pgd_attack_batch(bundle, lr, hr, cfg, rng)
        noisy = random_noise_input(lr, cfg, rng)
        with torch.no_grad():
            wins += float(attack_loss(bundle, adv, hr, cfg)) > float(attack_loss(bundle, noisy, hr, cfg))
    elapsed = time.perf_counter() - t0
    criterion(3, "PGD beats random eps-noise", wins >= 0.9 * trials and elapsed < 300,
              f"{wins}/{trials} trials, {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_4_robust_training_generalizes(criterion):
    t0 = time.perf_counter()
    setup = ComparisonSetup()
    summary = summarize([run_comparison(setup, seed) for seed in range(3)])
    elapsed = time.perf_counter() - t0
    percep_wins = sum(s["robust_percep"] < s["baseline_percep"] for s in summary.values())
    psnr_ok = all(s["robust_psnr_drop"] <= s["baseline_psnr_drop"] + 0.5 for s in summary.values())
    detail = "; ".join(
        f"{k}: percep {s['baseline_percep']:.4f}->{s['robust_percep']:.4f}, "
        f"psnr drop {s['baseline_psnr_drop']:.3f}->{s['robust_psnr_drop']:.3f} dB"
        for k, s in summary.items())
    criterion(4, "robust model generalizes to unseen corruptions (median of 3 seeds)",
              percep_wins >= 2 and psnr_ok, f"{percep_wins}/3 percep wins; {detail}; {elapsed:.0f}s")


MICRO = """\
[data]
hr_patch = 32
max_train_patches = 16
max_eval_patches = 4
synthetic_train_images = 4
synthetic_eval_images = 1
synthetic_size = 64

[model]
num_blocks = 1
base_channels = 8
growth_channels = 4

[train]
batch_size = 4
pretrain_iters = {pretrain}
l1_warmup_iters = {warmup}
robust_iters = {robust}
checkpoint_every = 1000
"""


@pytest.mark.slow
def test_criterion_6_determinism(criterion, tmp_path, monkeypatch):
    monkeypatch.delenv("RSRLAB_SEED", raising=False)
    conf = tmp_path / "micro.ini"
    conf.write_text(MICRO.format(pretrain=40, warmup=20, robust=40))
    sums, csvs = [], []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli.main(["pretrain", "--config", str(conf), "--output_dir", str(out / "pre")]) == 0
        assert cli.main(["robust-train", "--config", str(conf), "--output_dir", str(out / "rob"),
                         "--init_checkpoint", str(out / "pre" / "pretrained.ckpt")]) == 0
        assert cli.main(["eval", "--config", str(conf), "--output_dir", str(out / "ev"),
                         "--init_checkpoint", str(out / "rob" / "robust.ckpt")]) == 0
        sums.append(bundle_checksum(load_bundle(out / "rob" / "robust.ckpt")))
        csvs.append((out / "ev" / "metrics.csv").read_bytes())
    ok = sums[0] == sums[1] and csvs[0] == csvs[1]
    criterion(6, "identical seeds give identical checkpoints and metric CSVs", ok,
              f"checksum {sums[0][:12]} vs {sums[1][:12]}, csv equal {csvs[0] == csvs[1]}")


@pytest.mark.slow
def test_criterion_7_ablation_harness(criterion, tmp_path, monkeypatch):
    monkeypatch.delenv("RSRLAB_SEED", raising=False)
    t0 = time.perf_counter()
    conf = tmp_path / "micro.ini"
    conf.write_text(MICRO.format(pretrain=60, warmup=30, robust=50) + "\n[ablate]\nablate_iters = 50\n")
    out = tmp_path / "ablate"
    code = cli.main(["ablate", "--config", str(conf), "--output_dir", str(out)])
    rows = list(csv.DictReader((out / "ablation.csv").open())) if code == 0 else []
    axes = [r["axis"] for r in rows]
    finite = all(math.isfinite(float(v)) for r in rows for k, v in r.items() if k.split("_")[0] in
                 ("psnr", "ssim", "percep"))
    expected = ["base"] + ["epsilon"] * 5 + ["iters"] * 4 + ["structure"] * 2 + ["loss"] * 2
    losses = {r["loss"] for r in rows}
    ok = code == 0 and axes == expected and finite and losses == {"l1", "percep", "both"}
    criterion(7, "ablation sweep over eps, iters, structure and loss", ok,
              f"{len(rows)} rows (5+4+2+2 sweep + base), finite {finite}, {time.perf_counter() - t0:.0f}s")
