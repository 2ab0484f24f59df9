"""Alternating discriminator/generator training in pix2pix or ambient mode.

In ``pix2pix`` mode the discriminator judges ``(x, G(x))`` against the stored
noisy targets. In ``ambient`` mode the generator output is first pushed
through the target degradation inside the graph, so the discriminator only
ever compares measurements with measurements.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .. import degradation as deg
from ..rng import make_rng
from . import losses
from .networks import Generator, NetConfig, PatchDiscriminator, build_networks

log = logging.getLogger(__name__)

MODES = ("pix2pix", "ambient")
L1_TARGETS = ("measurement", "clean")
LOSS_COLUMNS = ("iter", "loss_d", "loss_g_adv", "loss_l1")
EMA_DECAY = 0.99
# stream offset for per-epoch shuffles, keeps them apart from other seeded streams
_SHUFFLE_STREAM = 1 << 32

Tap = Callable[[str, torch.Tensor, torch.Tensor], None]


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration: int, what: str = "loss"):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


class TrainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "ambient"
    lambda_l1: float = 1.0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 4
    total_iters: int = 2000
    target_degradation: deg.DegradationOp = field(default_factory=lambda: deg.AdditiveGaussian(0.0, 0.05))
    l1_target: str = "measurement"
    seed: int = 0
    checkpoint_every: int = 500
    non_saturating: bool = True
    swap_adversarial: bool = False
    clean_input: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise TrainConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.l1_target not in L1_TARGETS:
            raise TrainConfigError(f"l1_target must be one of {L1_TARGETS}, got {self.l1_target!r}")
        if self.batch_size < 1 or self.total_iters < 0 or self.checkpoint_every < 0:
            raise TrainConfigError("batch_size >= 1, total_iters >= 0, checkpoint_every >= 0 required")
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise TrainConfigError("invalid optimizer settings")
        if self.lambda_l1 < 0:
            raise TrainConfigError("lambda_l1 must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_degradation"] = deg.to_tree(self.target_degradation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise TrainConfigError(f"unknown train config keys: {sorted(extra)}")
        d = dict(d)
        if "target_degradation" in d and not isinstance(d["target_degradation"], deg.DegradationOp.__args__):
            d["target_degradation"] = deg.from_tree(d["target_degradation"])
        return cls(**d)


@dataclass
class TrainState:
    cfg: TrainConfig
    net_cfg: NetConfig
    generator: Generator
    discriminator: PatchDiscriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    noise_gen: torch.Generator
    iteration: int = 0
    running: dict = field(default_factory=lambda: {"loss_d": 0.0, "loss_g_adv": 0.0, "loss_l1": 0.0})


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))


def init_state(cfg: TrainConfig, net_cfg: NetConfig = NetConfig(), dtype=torch.float32) -> TrainState:
    g, d = build_networks(net_cfg, cfg.seed)
    g, d = g.to(dtype), d.to(dtype)
    noise = torch.Generator()
    noise.manual_seed(int(cfg.seed) & ((1 << 63) - 1))
    return TrainState(cfg, net_cfg, g, d, make_optimizer(g.parameters(), cfg),
                      make_optimizer(d.parameters(), cfg), noise)


def batch_indices(seed: int, iteration: int, train_idx, batch_size: int) -> np.ndarray:
    """Indices for one iteration: consecutive slice of per-epoch shuffles."""
    train_idx = np.asarray(train_idx)
    n = len(train_idx)
    out = np.empty(batch_size, dtype=np.int64)
    cache = {}
    for k in range(batch_size):
        pos = iteration * batch_size + k
        epoch, j = divmod(pos, n)
        if epoch not in cache:
            cache[epoch] = make_rng(seed, _SHUFFLE_STREAM + epoch).permutation(train_idx)
        out[k] = cache[epoch][j]
    return out


def batch_tensors(dataset, idx, clean_input: bool = False, dtype=torch.float32):
    """``(x, y_meas, y_clean)`` tensors of shape ``(B, 1, H, W)``."""
    src = dataset.source_clean if clean_input else dataset.source_meas
    as_t = lambda a: torch.as_tensor(np.asarray(a[idx]), dtype=dtype).unsqueeze(1)
    return as_t(src), as_t(dataset.target_meas), as_t(dataset.target_clean)


def measure(cfg: TrainConfig, y_c, generator):
    """What the discriminator sees in place of a fake image."""
    if cfg.mode == "ambient":
        return deg.apply_tensor(cfg.target_degradation, y_c, generator)
    return y_c


def train_step(state: TrainState, batch, cfg: TrainConfig | None = None,
               tap: Optional[Tap] = None) -> dict:
    """One discriminator update followed by one generator update.

    ``batch`` is ``(x, y_meas, y_clean)``. ``tap(role, x, y)`` is called with
    every pair handed to the discriminator. Returns the loss record and
    advances ``state`` in place.
    """
    cfg = cfg or state.cfg
    x, y_meas, y_clean = batch
    G, D = state.generator, state.discriminator
    it = state.iteration + 1

    y_c = G(x)
    if tap:
        tap("generator", x, y_c)
    y_hat = measure(cfg, y_c, state.noise_gen)

    # discriminator
    fake = y_hat.detach()
    if tap:
        tap("d_real", x, y_meas)
        tap("d_fake", x, fake)
    d_real = torch.sigmoid(D(x, y_meas))
    d_fake = torch.sigmoid(D(x, fake))
    loss_d = -losses.loss_cgan(d_real, d_fake, literal=cfg.swap_adversarial)
    if not torch.isfinite(loss_d):
        raise TrainingDivergedError(it, "discriminator loss")
    state.opt_d.zero_grad(set_to_none=True)
    loss_d.backward()
    state.opt_d.step()

    # generator
    if tap:
        tap("g_fake", x, y_hat)
    d_fake_g = torch.sigmoid(D(x, y_hat))
    adv = losses.generator_adv(d_fake_g, cfg.non_saturating, literal=cfg.swap_adversarial)
    if cfg.l1_target == "measurement":
        l1 = losses.loss_l1(y_hat, y_meas)
    else:
        l1 = losses.loss_l1(y_c, y_clean)
    total = losses.total_loss(adv, l1, cfg.lambda_l1)
    if not torch.isfinite(total):
        raise TrainingDivergedError(it, "generator loss")
    state.opt_g.zero_grad(set_to_none=True)
    state.opt_d.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()
    state.opt_d.zero_grad(set_to_none=True)

    state.iteration = it
    record = {"iter": it, "loss_d": loss_d.item(), "loss_g_adv": adv.item(), "loss_l1": l1.item()}
    for k in ("loss_d", "loss_g_adv", "loss_l1"):
        prev = state.running[k]
        state.running[k] = record[k] if it == 1 else EMA_DECAY * prev + (1 - EMA_DECAY) * record[k]
    return record


def write_loss_log(path, rows) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for r in rows:
            w.writerow([r["iter"]] + [repr(float(r[k])) for k in LOSS_COLUMNS[1:]])
    tmp.replace(path)


def read_loss_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"iter": int(r["iter"]), **{k: float(r[k]) for k in LOSS_COLUMNS[1:]}}
                for r in csv.DictReader(fh)]


def latest_checkpoint(out_dir) -> Path | None:
    ckpts = sorted(Path(out_dir, "checkpoints").glob("iter_*.ckpt"))
    return ckpts[-1] if ckpts else None


def train(dataset, cfg: TrainConfig, net_cfg: NetConfig = NetConfig(), out_dir=None,
          resume: bool | str | Path = False, tap: Optional[Tap] = None,
          state: TrainState | None = None) -> tuple[TrainState, list[dict]]:
    """Run ``cfg.total_iters`` iterations over the shuffled training split.

    With ``out_dir`` set, checkpoints land in ``out_dir/checkpoints`` every
    ``cfg.checkpoint_every`` iterations, the final state in
    ``out_dir/checkpoint.ckpt`` and the loss log in ``out_dir/losses.csv``.
    ``resume`` continues from the newest periodic checkpoint (or the given
    path) and keeps the matching prefix of the loss log.
    """
    from .checkpoint import load_checkpoint, save_checkpoint

    torch.use_deterministic_algorithms(True)
    train_idx = dataset.train_idx
    if len(train_idx) < cfg.batch_size:
        raise TrainConfigError(f"train split ({len(train_idx)}) smaller than batch size {cfg.batch_size}")
    out = Path(out_dir) if out_dir is not None else None
    rows: list[dict] = []

    if resume:
        path = Path(resume) if not isinstance(resume, bool) else (latest_checkpoint(out) if out else None)
        if path is None or not path.exists():
            raise FileNotFoundError(f"no checkpoint to resume from under {out}")
        state = load_checkpoint(path, cfg=cfg)
        log_path = out / "losses.csv" if out else None
        if log_path and log_path.exists():
            rows = [r for r in read_loss_log(log_path) if r["iter"] <= state.iteration]
        log.info("resumed from %s at iteration %d", path, state.iteration)
    elif state is None:
        state = init_state(cfg, net_cfg)
    state.cfg = cfg

    if out:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    state.generator.train()
    state.discriminator.train()
    while state.iteration < cfg.total_iters:
        idx = batch_indices(cfg.seed, state.iteration, train_idx, cfg.batch_size)
        rows.append(train_step(state, batch_tensors(dataset, idx, cfg.clean_input), cfg, tap))
        if state.iteration % 100 == 0:
            log.info("iter %d  D %.4f  G_adv %.4f  L1 %.4f", state.iteration,
                     state.running["loss_d"], state.running["loss_g_adv"], state.running["loss_l1"])
        if out and cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0:
            save_checkpoint(state, out / "checkpoints" / f"iter_{state.iteration:07d}.ckpt")
            write_loss_log(out / "losses.csv", rows)
    if out:
        save_checkpoint(state, out / "checkpoint.ckpt")
        write_loss_log(out / "losses.csv", rows)
    return state, rows


@torch.no_grad()
def translate(state_or_generator, x, chunk: int = 32) -> np.ndarray:
    """Clean-domain estimates ``G(x)`` for an ``(N, H, W)`` stack; never degrades."""
    G = state_or_generator.generator if isinstance(state_or_generator, TrainState) else state_or_generator
    G.eval()
    x = np.asarray(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    dtype = next(G.parameters()).dtype
    outs = []
    for s in range(0, len(x), chunk):
        xt = torch.as_tensor(x[s:s + chunk], dtype=dtype).unsqueeze(1)
        outs.append(G(xt).squeeze(1).numpy())
    G.train()
    y = np.concatenate(outs) if outs else np.zeros_like(x)
    return y[0] if squeeze else y
