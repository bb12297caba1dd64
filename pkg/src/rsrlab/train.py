"""Clean pretraining and robust (adversarial) training of the SR GAN.

Both phases share one GAN update (discriminator first, then generator).
Robust training replaces LR inputs by PGD examples computed against the
current, frozen generator before every update, and always scores the
generator against the clean HR target.
"""

from __future__ import annotations

import io
import json
import math
import time
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import Tensor

from .attack import AttackConfig, pgd_attack_batch
from .dataio import PatchPair
from .errors import ConfigError, DimensionError, FormatError, NumericalError
from .losses import LossWeights, gan_loss_d, gan_loss_g, l1_loss, perceptual_loss, total_g_loss
from .model import (DiscriminatorConfig, FeatureConfig, GeneratorConfig, ModelBundle, freeze,
                    init_models)

CKPT_FORMAT = "rsrlab-ckpt-v1"
LOG_COLUMNS = ("iter", "l1", "percep", "gan_g", "gan_d", "attack_loss_mean", "wall_time")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    batch_size: int = 8
    total_iters: int = 2000
    l1_warmup_iters: int = 0
    adv_fraction: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    attack: AttackConfig = field(default_factory=AttackConfig)
    seed: int = 0
    checkpoint_every: int = 500
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.total_iters < 0 or self.l1_warmup_iters < 0:
            raise ConfigError("iteration counts must be nonnegative")
        if self.l1_warmup_iters > self.total_iters:
            raise ConfigError(
                f"l1_warmup_iters ({self.l1_warmup_iters}) exceeds total_iters ({self.total_iters})"
            )
        if not 0.0 <= self.adv_fraction <= 1.0:
            raise ConfigError(f"adv_fraction must lie in [0, 1], got {self.adv_fraction}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be positive")


@dataclass
class AdamState:
    m: list[Tensor]
    v: list[Tensor]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])


def adam_step(params: Sequence[Tensor], grads: Sequence[Tensor], moments: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.99, eps_hat: float = 1e-8):
    """Bias-corrected Adam update, applied in place; returns ``(params, moments)``."""
    if eps_hat <= 0:
        raise ConfigError("eps_hat must be positive")
    if len(params) != len(grads) or len(params) != len(moments.m):
        raise DimensionError("params, grads and moments must align")
    for g in grads:
        if not torch.isfinite(g).all():
            raise NumericalError(f"non-finite gradient at optimizer step {moments.step + 1}")
    t = moments.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, moments.m, moments.v):
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps_hat))
    moments.step = t
    return params, moments


@dataclass
class TrainState:
    bundle: ModelBundle
    g_adam: AdamState
    d_adam: AdamState
    data_rng: np.random.Generator
    attack_rng: np.random.Generator
    iteration: int = 0
    phase: str = "init"
    phase_iteration: int = 0
    perm: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cursor: int = 0
    running: dict = field(default_factory=dict)


def new_train_state(bundle: ModelBundle, seed: int = 0) -> TrainState:
    data_ss, attack_ss = np.random.SeedSequence(seed).spawn(2)
    return TrainState(
        bundle=bundle,
        g_adam=AdamState.zeros_like(list(bundle.generator.parameters())),
        d_adam=AdamState.zeros_like(list(bundle.discriminator.parameters())),
        data_rng=np.random.default_rng(data_ss),
        attack_rng=np.random.default_rng(attack_ss),
    )


# ---------------------------------------------------------------------------
# batches


def stack_pairs(dataset: Sequence[PatchPair]) -> tuple[Tensor, Tensor]:
    """All LR and HR patches as float64 NCHW tensors."""
    if not dataset:
        raise ValueError("dataset is empty")
    lr = np.stack([p.lr for p in dataset]).transpose(0, 3, 1, 2)
    hr = np.stack([p.hr for p in dataset]).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(lr)), torch.from_numpy(np.ascontiguousarray(hr))


def _next_indices(state: TrainState, n: int, batch_size: int) -> np.ndarray:
    out = []
    while len(out) < batch_size:
        if state.cursor >= len(state.perm) or len(state.perm) != n:
            state.perm = state.data_rng.permutation(n)
            state.cursor = 0
        take = min(batch_size - len(out), n - state.cursor)
        out.extend(state.perm[state.cursor:state.cursor + take].tolist())
        state.cursor += take
    return np.asarray(out, dtype=np.int64)


def _check_dataset(bundle: ModelBundle, dataset: Sequence[PatchPair]) -> None:
    if not dataset:
        raise ValueError("dataset is empty")
    g, d = bundle.gcfg, bundle.dcfg
    for p in dataset[:1]:
        if p.scale != g.scale:
            raise DimensionError(f"dataset scale {p.scale} does not match generator scale {g.scale}")
        if p.hr.shape[:2] != (d.hr_size, d.hr_size):
            raise DimensionError(f"HR patches are {p.hr.shape[:2]}, discriminator expects {d.hr_size}")


# ---------------------------------------------------------------------------
# updates


def _update_running(state: TrainState, row: dict, decay: float = 0.98) -> None:
    for k, v in row.items():
        if k in ("iter", "wall_time") or v is None or not math.isfinite(v):
            continue
        prev = state.running.get(k)
        state.running[k] = v if prev is None else decay * prev + (1 - decay) * v


def _l1_step(state: TrainState, lr: Tensor, hr: Tensor, cfg: TrainConfig) -> dict:
    gen = state.bundle.generator
    params = list(gen.parameters())
    dtype = params[0].dtype
    sr = gen(lr.to(dtype))
    loss = l1_loss(sr, hr.to(dtype))
    grads = torch.autograd.grad(loss, params)
    adam_step(params, grads, state.g_adam, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    return {"l1": loss.item()}


def _gan_step(state: TrainState, lr: Tensor, hr: Tensor, cfg: TrainConfig) -> dict:
    b = state.bundle
    g_params = list(b.generator.parameters())
    d_params = list(b.discriminator.parameters())
    dtype = g_params[0].dtype
    hr = hr.to(dtype)
    sr = b.generator(lr.to(dtype))

    # discriminator sees a detached copy of the generator output
    loss_d = gan_loss_d(b.discriminator(hr), b.discriminator(sr.detach()))
    d_grads = torch.autograd.grad(loss_d, d_params)
    adam_step(d_params, d_grads, state.d_adam, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)

    l1 = l1_loss(sr, hr)
    percep = perceptual_loss(b.feature_net, sr, hr)
    with torch.no_grad():
        real_logits = b.discriminator(hr)
    loss_g_gan = gan_loss_g(real_logits, b.discriminator(sr))
    loss_g = total_g_loss(cfg.weights, l1, percep, loss_g_gan)
    g_grads = torch.autograd.grad(loss_g, g_params)
    adam_step(g_params, g_grads, state.g_adam, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    return {"l1": l1.item(), "percep": percep.item(), "gan_g": loss_g_gan.item(), "gan_d": loss_d.item()}


LogFn = Callable[[dict], None]
CheckpointFn = Callable[[TrainState], None]


def _enter_phase(state: TrainState, phase: str) -> None:
    if state.phase != phase:
        state.phase = phase
        state.phase_iteration = 0


def _run(state: TrainState, dataset: Sequence[PatchPair], cfg: TrainConfig, phase: str,
         step: Callable[[TrainState, Tensor, Tensor], dict], log: LogFn | None,
         on_checkpoint: CheckpointFn | None) -> TrainState:
    if not dataset:
        raise ValueError("dataset is empty")
    _check_dataset(state.bundle, dataset)
    _enter_phase(state, phase)
    lr_all, hr_all = stack_pairs(dataset)
    fsum = state.bundle.feature_checksum()
    start = time.perf_counter()
    while state.phase_iteration < cfg.total_iters:
        idx = torch.from_numpy(_next_indices(state, len(dataset), cfg.batch_size))
        row = step(state, lr_all[idx], hr_all[idx])
        state.iteration += 1
        state.phase_iteration += 1
        _update_running(state, row)
        if log is not None:
            full = {k: row.get(k, float("nan")) for k in LOG_COLUMNS}
            full["iter"] = state.iteration
            full["wall_time"] = time.perf_counter() - start
            log(full)
        if on_checkpoint is not None and state.phase_iteration % cfg.checkpoint_every == 0:
            on_checkpoint(state)
    if state.bundle.feature_checksum() != fsum:
        raise RuntimeError("feature extractor parameters changed during training")
    return state


def pretrain_clean(state: TrainState, dataset: Sequence[PatchPair], cfg: TrainConfig,
                   log: LogFn | None = None, on_checkpoint: CheckpointFn | None = None) -> TrainState:
    """Stage 1: L1 warmup, then relativistic GAN training on clean LR inputs.

    Runs until the phase counter reaches ``cfg.total_iters``, so a state
    restored from a mid-run checkpoint resumes where it stopped.
    """

    def step(st, lr, hr):
        if st.phase_iteration < cfg.l1_warmup_iters:
            return _l1_step(st, lr, hr, cfg)
        return _gan_step(st, lr, hr, cfg)

    return _run(state, dataset, cfg, "pretrain", step, log, on_checkpoint)


def adversarial_batch(state: TrainState, lr: Tensor, hr: Tensor, cfg: TrainConfig) -> tuple[Tensor, float]:
    """Replace each LR sample by its PGD example with probability ``adv_fraction``."""
    atk = cfg.attack
    mask = torch.from_numpy(state.attack_rng.random(lr.shape[0]) < cfg.adv_fraction)
    if not mask.any():
        return lr, float("nan")
    gen = state.bundle.generator
    flags = [p.requires_grad for p in gen.parameters()]
    freeze(gen)
    try:
        adv, loss = pgd_attack_batch(state.bundle, lr[mask], hr[mask], atk, state.attack_rng, final_loss=True)
    finally:
        for p, f in zip(gen.parameters(), flags):
            p.requires_grad_(f)
        gen.train()
    bound = atk.epsilon * (atk.iters + 1 if atk.recenter else 1) + 1e-9
    if (adv - lr[mask]).abs().max() > bound or adv.min() < 0 or adv.max() > 1:
        raise NumericalError(f"adversarial batch left the valid set at iteration {state.iteration}")
    out = lr.clone()
    out[mask] = adv
    return out, loss


def robust_train(state: TrainState, dataset: Sequence[PatchPair], cfg: TrainConfig,
                 log: LogFn | None = None, on_checkpoint: CheckpointFn | None = None) -> TrainState:
    """Stage 2: fresh PGD examples every batch, then one D and one G update.

    With ``adv_fraction == 0`` no attack RNG is consumed and the run is
    identical to the GAN phase of :func:`pretrain_clean`.
    """

    def step(st, lr, hr):
        attack_mean = float("nan")
        if cfg.adv_fraction > 0:
            lr, attack_mean = adversarial_batch(st, lr, hr, cfg)
        row = _gan_step(st, lr, hr, cfg)
        row["attack_loss_mean"] = attack_mean
        return row

    return _run(state, dataset, cfg, "robust", step, log, on_checkpoint)


# ---------------------------------------------------------------------------
# checkpoints


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _put(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _state_dict_arrays(prefix: str, module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}.npy": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    b = state.bundle
    meta = {
        "format": CKPT_FORMAT,
        "seed": b.seed,
        "generator_config": asdict(b.gcfg),
        "discriminator_config": asdict(b.dcfg),
        "feature_config": {**asdict(b.fcfg), "stage_channels": list(b.fcfg.stage_channels)},
        "iteration": state.iteration,
        "phase": state.phase,
        "phase_iteration": state.phase_iteration,
        "cursor": state.cursor,
        "running": state.running,
        "g_adam_step": state.g_adam.step,
        "d_adam_step": state.d_adam.step,
        "data_rng": state.data_rng.bit_generator.state,
        "attack_rng": state.attack_rng.bit_generator.state,
    }
    arrays = {}
    arrays.update(_state_dict_arrays("generator", b.generator))
    arrays.update(_state_dict_arrays("discriminator", b.discriminator))
    arrays.update(_state_dict_arrays("feature", b.feature_net))
    for tag, adam in (("adam_g", state.g_adam), ("adam_d", state.d_adam)):
        for i, (m, v) in enumerate(zip(adam.m, adam.v)):
            arrays[f"{tag}/m/{i:04d}.npy"] = m.cpu().numpy()
            arrays[f"{tag}/v/{i:04d}.npy"] = v.cpu().numpy()
    arrays["perm.npy"] = np.asarray(state.perm, dtype=np.int64)

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        _put(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        for name in sorted(arrays):
            _put(zf, name, _npy_bytes(arrays[name]))
    tmp.replace(path)


def _read_archive(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            arrays = {}
            for name in zf.namelist():
                if name.endswith(".npy"):
                    arrays[name] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    except FileNotFoundError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError, OSError) as exc:
        raise FormatError(f"{path}: not a readable checkpoint ({exc})") from None
    if meta.get("format") != CKPT_FORMAT:
        raise FormatError(f"{path}: checkpoint format {meta.get('format')!r}, expected {CKPT_FORMAT!r}")
    return meta, arrays


def _load_module(module: torch.nn.Module, prefix: str, arrays: dict[str, np.ndarray], path: Path) -> None:
    sd = {}
    for key in module.state_dict():
        name = f"{prefix}/{key}.npy"
        if name not in arrays:
            raise FormatError(f"{path}: missing tensor {name}")
        sd[key] = torch.from_numpy(arrays[name].copy())
    module.load_state_dict(sd)


def _bundle_from(meta: dict, arrays: dict, path: Path) -> ModelBundle:
    try:
        gcfg = GeneratorConfig(**meta["generator_config"])
        dcfg = DiscriminatorConfig(**meta["discriminator_config"])
        fc = dict(meta["feature_config"])
        fcfg = FeatureConfig(stage_channels=tuple(fc["stage_channels"]), channels=fc["channels"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed model config ({exc})") from None
    bundle = init_models(gcfg, meta["seed"], dcfg=dcfg, fcfg=fcfg)
    _load_module(bundle.generator, "generator", arrays, path)
    _load_module(bundle.discriminator, "discriminator", arrays, path)
    _load_module(bundle.feature_net, "feature", arrays, path)
    freeze(bundle.feature_net)
    return bundle


def load_bundle(path: str | Path) -> ModelBundle:
    path = Path(path)
    meta, arrays = _read_archive(path)
    return _bundle_from(meta, arrays, path)


def load_checkpoint(path: str | Path) -> TrainState:
    path = Path(path)
    meta, arrays = _read_archive(path)
    bundle = _bundle_from(meta, arrays, path)

    def adam(tag: str, params, step: int) -> AdamState:
        m, v = [], []
        for i, p in enumerate(params):
            try:
                m.append(torch.from_numpy(arrays[f"{tag}/m/{i:04d}.npy"].copy()))
                v.append(torch.from_numpy(arrays[f"{tag}/v/{i:04d}.npy"].copy()))
            except KeyError:
                raise FormatError(f"{path}: missing optimizer moments for {tag}") from None
        return AdamState(m, v, step)

    try:
        data_rng = np.random.default_rng()
        data_rng.bit_generator.state = meta["data_rng"]
        attack_rng = np.random.default_rng()
        attack_rng.bit_generator.state = meta["attack_rng"]
        return TrainState(
            bundle=bundle,
            g_adam=adam("adam_g", list(bundle.generator.parameters()), meta["g_adam_step"]),
            d_adam=adam("adam_d", list(bundle.discriminator.parameters()), meta["d_adam_step"]),
            data_rng=data_rng,
            attack_rng=attack_rng,
            iteration=meta["iteration"],
            phase=meta["phase"],
            phase_iteration=meta["phase_iteration"],
            perm=arrays["perm.npy"],
            cursor=meta["cursor"],
            running=dict(meta["running"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed checkpoint state ({exc})") from None
