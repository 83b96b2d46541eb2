"""Adam, the step learning-rate schedule, the mini-batch loop and evaluation."""

import csv
import dataclasses
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint, save_checkpoint
from .errors import ConfigError
from .model import build, forward

logger = logging.getLogger(__name__)

METRICS_FIELDS = ("epoch", "lr", "train_loss", "train_err", "val_err")
TIMING_FIELDS = ("epoch", "wall_seconds")


@dataclass
class TrainConfig:
    lr0: float = 0.001
    decay_factor: float = 0.1
    decay_epochs: tuple = (30, 50)
    epochs: int = 60
    batch_size: int = 256
    dropout_keep: float = 0.55
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if any(e >= self.epochs or e < 0 for e in self.decay_epochs):
            raise ConfigError(f"decay epochs {self.decay_epochs} must lie in [0, {self.epochs})")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["decay_epochs"] = list(self.decay_epochs)
        return d


def lr_at(epoch, cfg):
    """Learning rate for a 0-based epoch: lr0 times decay_factor per passed decay epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    drops = sum(1 for e in cfg.decay_epochs if epoch >= e)
    # dividing by the reciprocal keeps 0.001 -> 1e-4 -> 1e-5 exact in binary floats
    return cfg.lr0 / (1.0 / cfg.decay_factor) ** drops


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied in place to the ``params`` arrays."""
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise FloatingPointError(f"non-finite gradients at step {state.t + 1} in: {', '.join(bad)}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if p.shape != g.shape:
            raise ConfigError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.dtype, copy=False)
    return params, state


def predict(dataset, params, spec):
    return np.array([int(np.argmax(forward(params, spec, g).value)) for g in dataset])


def evaluate(dataset, params, spec):
    """Classification error rate in eval mode."""
    if not dataset:
        return float("nan")
    labels = np.array([g.label for g in dataset])
    return float(np.mean(predict(dataset, params, spec) != labels))


@dataclass
class TrainResult:
    params: object
    log: list
    optimizer: AdamState
    step: int
    epoch: int


def _fmt(x):
    return "" if x is None else f"{x:.10g}"


class _CsvLog:
    def __init__(self, path, fields, append):
        self.fields = fields
        exists = append and os.path.exists(path)
        self.fh = open(path, "a" if exists else "w", encoding="utf-8", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        if not exists:
            self.writer.writerow(fields)

    def write(self, row):
        self.writer.writerow([row[f] if isinstance(row[f], str) else _fmt(row[f]) for f in self.fields])
        self.fh.flush()

    def close(self):
        self.fh.close()


def train(dataset, spec, cfg, val=None, out_dir=None, resume=None, data_meta=None):
    """Train ``spec`` on a list of TextGraphs.

    Each epoch shuffles the data with the seeded generator, runs one tape per
    graph so gradients accumulate into the parameters across the batch, then
    takes one Adam step per batch. The last partial batch is kept.

    With ``out_dir`` the run writes ``metrics.csv`` (deterministic columns),
    ``timing.csv`` (wall-clock seconds per epoch) and ``checkpoint.json``
    after every epoch. ``resume`` takes a :class:`Checkpoint` and continues
    from the epoch after the one it recorded.
    """
    if not dataset:
        raise ConfigError("training set is empty")
    dims = {g.features.shape[1] for g in dataset}
    if dims != {spec.input_dim}:
        raise ConfigError(f"feature widths {sorted(dims)} do not match model input_dim {spec.input_dim}")
    spec = dataclasses.replace(spec, dropout_keep=cfg.dropout_keep)
    dtype = np.dtype(cfg.dtype)

    rng = np.random.default_rng(cfg.seed)
    if resume is not None:
        params = resume.params(dtype=dtype)
        opt = AdamState()
        if resume.optimizer is not None:
            opt = AdamState(
                t=resume.optimizer["t"],
                m={k: v.astype(dtype) for k, v in resume.optimizer["m"].items()},
                v={k: v.astype(dtype) for k, v in resume.optimizer["v"].items()},
            )
        if resume.rng_state is not None:
            rng.bit_generator.state = resume.rng_state
        step, start_epoch = resume.step, resume.epoch + 1
    else:
        params = build(spec, cfg.seed, dtype=dtype)
        opt = AdamState()
        step, start_epoch = 0, 0

    named = params.named()
    log = []
    metrics = timing = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics = _CsvLog(os.path.join(out_dir, "metrics.csv"), METRICS_FIELDS, resume is not None)
        timing = _CsvLog(os.path.join(out_dir, "timing.csv"), TIMING_FIELDS, resume is not None)

    n = len(dataset)
    epoch = start_epoch - 1
    try:
        for epoch in range(start_epoch, cfg.epochs):
            t0 = time.perf_counter()
            lr = lr_at(epoch, cfg)
            order = rng.permutation(n)
            loss_sum, wrong = 0.0, 0
            for start in range(0, n, cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                params.zero_grad()
                for i in batch:
                    g = dataset[i]
                    with ad.Tape() as tape:
                        logits = forward(params, spec, g, train=True, rng=rng)
                        loss = ad.softmax_cross_entropy(
                            ad.stack_rows([logits]), [g.label], denominator=len(batch)
                        )
                    tape.backward(loss)
                    loss_sum += float(loss.value) * len(batch)
                    wrong += int(np.argmax(logits.value) != g.label)
                adam_step(
                    {k: t.value for k, t in named.items()},
                    {k: t.grad for k, t in named.items()},
                    opt, lr, cfg.beta1, cfg.beta2, cfg.eps,
                )
                step += 1
            row = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": loss_sum / n,
                "train_err": wrong / n,
                "val_err": evaluate(val, params, spec) if val else None,
            }
            log.append(row)
            logger.info("epoch %d lr %.3g loss %.4f err %.4f", epoch, lr, row["train_loss"], row["train_err"])
            if out_dir is not None:
                metrics.write(row)
                timing.write({"epoch": epoch, "wall_seconds": time.perf_counter() - t0})
                save_checkpoint(
                    os.path.join(out_dir, "checkpoint.json"),
                    Checkpoint(
                        spec=spec,
                        arrays={k: t.value for k, t in named.items()},
                        seed=cfg.seed,
                        step=step,
                        epoch=epoch,
                        optimizer={"t": opt.t, "m": opt.m, "v": opt.v},
                        rng_state=rng.bit_generator.state,
                        data=data_meta or {},
                    ),
                )
    except KeyboardInterrupt:
        logger.warning("interrupted during epoch %d; last checkpoint covers epoch %d", epoch, epoch - 1)
        raise
    finally:
        if metrics is not None:
            metrics.close()
            timing.close()
    return TrainResult(params=params, log=log, optimizer=opt, step=step, epoch=epoch)
