"""Desk-scale training: L1 loss, Adam, step LR schedule, patch sampling, train loop,
and gradient verification harnesses."""
from __future__ import annotations

import copy
import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binarization import rsign_backward, rsign_forward, RSignParams
from .evaluation import bicubic_resize, modcrop
from .network import Model, extra_state, load_checkpoint, save_checkpoint
from .tensor import DimensionError, precision

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    patch: int = 48
    batch: int = 16
    lr0: float = 2e-4
    halve_every: int = 200
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    steps: int = 1000
    steps_per_epoch: int | None = None
    seed: int = 0
    fixed_batch: bool = False
    augment: bool = False
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    log_every: int = 0


# -- loss / optimizer ----------------------------------------------------------------

def l1_loss(sr: np.ndarray, hr: np.ndarray):
    """Mean absolute error and its gradient (subgradient 0 at ties)."""
    if sr.shape != hr.shape:
        raise DimensionError(f"shape mismatch {sr.shape} vs {hr.shape}")
    diff = sr - hr
    return float(np.mean(np.abs(diff))), (np.sign(diff) / diff.size).astype(sr.dtype)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """In-place bias-corrected Adam update of ``params``."""
    b1, b2 = betas
    state.t += 1
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.dtype)
    return state


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr0 * 0.5 ** (epoch // cfg.halve_every)


# -- data -------------------------------------------------------------------------------

@dataclass
class PairedDataset:
    """Aligned LR/HR image pairs, each (3, h, w) float in [0, 1]."""

    lr: list[np.ndarray]
    hr: list[np.ndarray]
    scale: int

    def __post_init__(self):
        if len(self.lr) != len(self.hr):
            raise ValueError("LR and HR lists differ in length")
        for lr, hr in zip(self.lr, self.hr):
            if (hr.shape[1], hr.shape[2]) != (lr.shape[1] * self.scale, lr.shape[2] * self.scale):
                raise DimensionError(f"HR {hr.shape} is not x{self.scale} of LR {lr.shape}")

    def __len__(self):
        return len(self.hr)

    @classmethod
    def from_hr(cls, images, scale: int) -> "PairedDataset":
        hrs = [modcrop(np.asarray(im, dtype=np.float32), scale) for im in images]
        lrs = [np.clip(bicubic_resize(h, 1.0 / scale), 0.0, 1.0).astype(np.float32) for h in hrs]
        return cls(lrs, hrs, scale)


def _augment(lr, hr, rng):
    k = int(rng.integers(4))
    flip = bool(rng.integers(2))
    lr, hr = np.rot90(lr, k, axes=(1, 2)), np.rot90(hr, k, axes=(1, 2))
    if flip:
        lr, hr = lr[:, :, ::-1], hr[:, :, ::-1]
    return lr, hr


def sample_patches(dataset: PairedDataset, cfg: TrainConfig, rng: np.random.Generator):
    """Random aligned crops: (batch, 3, p, p) LR and (batch, 3, p*s, p*s) HR."""
    p, s = cfg.patch, dataset.scale
    eligible = [i for i, lr in enumerate(dataset.lr) if lr.shape[1] >= p and lr.shape[2] >= p]
    if len(eligible) < len(dataset):
        warnings.warn(f"skipping {len(dataset) - len(eligible)} image(s) smaller than the {p}x{p} patch")
    if not eligible:
        raise ValueError(f"no training image is at least {p}x{p} (LR side)")
    lrb = np.empty((cfg.batch, 3, p, p), dtype=np.float32)
    hrb = np.empty((cfg.batch, 3, p * s, p * s), dtype=np.float32)
    for b in range(cfg.batch):
        i = eligible[int(rng.integers(len(eligible)))]
        lr, hr = dataset.lr[i], dataset.hr[i]
        y = int(rng.integers(lr.shape[1] - p + 1))
        x = int(rng.integers(lr.shape[2] - p + 1))
        lp = lr[:, y:y + p, x:x + p]
        hp = hr[:, s * y:s * (y + p), s * x:s * (x + p)]
        if cfg.augment:
            lp, hp = _augment(lp, hp, rng)
        lrb[b], hrb[b] = lp, hp
    return lrb, hrb


# -- loop -----------------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: Model
    trace: list[tuple[int, float, float]]
    adam: AdamState

    def write_csv(self, path) -> None:
        write_trace_csv(self.trace, path)


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["step", "lr", "loss"])
        for step, lr, loss in trace:
            wr.writerow([step, repr(lr), repr(loss)])


def _layer_dump(model: Model) -> str:
    lines = []
    for name, p in model.named_parameters():
        finite = np.isfinite(p)
        tag = "" if finite.all() else "  <-- non-finite"
        mx = float(np.abs(p[finite]).max()) if finite.any() else float("nan")
        lines.append(f"  {name:<40} max|p|={mx:.4g}{tag}")
    return "\n".join(lines)


def save_training_checkpoint(path, model: Model, adam: AdamState, step: int, rng: np.random.Generator) -> None:
    extra = {}
    for name in adam.m:
        extra[f"adam.m.{name}"] = adam.m[name]
        extra[f"adam.v.{name}"] = adam.v[name]
    meta = {"step": step, "adam_t": adam.t, "rng": rng.bit_generator.state}
    save_checkpoint(model, path, extra_arrays=extra, extra_meta=meta)


def load_training_checkpoint(path):
    """Return ``(model, adam_state, step, rng)`` from a training checkpoint."""
    model = load_checkpoint(path)
    meta, arrays = extra_state(path)
    adam = AdamState(t=int(meta.get("adam_t", 0)))
    for key, arr in arrays.items():
        kind, name = key.split(".", 2)[1], key.split(".", 2)[2]
        (adam.m if kind == "m" else adam.v)[name] = arr
    rng = np.random.default_rng()
    if "rng" in meta:
        rng.bit_generator.state = meta["rng"]
    return model, adam, int(meta.get("step", 0)), rng


def train_loop(model: Model, dataset: PairedDataset, cfg: TrainConfig, *, resume=None,
               trace_path=None) -> TrainResult:
    """Train ``model`` for ``cfg.steps`` total steps.

    With ``resume`` (a training checkpoint path) the model, optimizer, step
    counter and sampler state are restored and training continues from there;
    the returned trace then covers only the resumed steps.
    """
    if dataset.scale != model.scale:
        raise ValueError(f"dataset is x{dataset.scale}, model is x{model.scale}")
    if resume is not None:
        model, adam, start, rng = load_training_checkpoint(resume)
    else:
        adam, start, rng = AdamState(), 0, np.random.default_rng(cfg.seed)
    steps_per_epoch = cfg.steps_per_epoch or max(1, math.ceil(len(dataset) / cfg.batch))
    fixed = None
    if cfg.fixed_batch:
        fixed = sample_patches(dataset, cfg, np.random.default_rng([cfg.seed, 1]))
    if not model.calibrated:
        model.calibrate((fixed or sample_patches(dataset, cfg, np.random.default_rng([cfg.seed, 2])))[0])
    trace = []
    for step in range(start, cfg.steps):
        lr_img, hr_img = fixed if fixed is not None else sample_patches(dataset, cfg, rng)
        lr = lr_schedule(step // steps_per_epoch, cfg)
        model.zero_grad()
        sr = model.forward(lr_img, train=True)
        loss, g = l1_loss(sr, hr_img)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss at step {step}; parameter statistics:\n{_layer_dump(model)}")
        model.backward(g)
        params = dict(model.named_parameters())
        adam_step(params, dict(model.named_grads()), adam, lr, cfg.betas, cfg.eps)
        model.constrain()
        trace.append((step, lr, loss))
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d lr %.3g loss %.5f", step, lr, loss)
        done = step + 1
        if cfg.checkpoint_every and cfg.checkpoint_dir and done % cfg.checkpoint_every == 0:
            d = Path(cfg.checkpoint_dir)
            d.mkdir(parents=True, exist_ok=True)
            save_training_checkpoint(d / f"step_{done:06d}.ebsr", model, adam, done, rng)
    if trace_path is not None:
        write_trace_csv(trace, trace_path)
    return TrainResult(model, trace, adam)


# -- gradient checks -----------------------------------------------------------------------

@dataclass
class GradCheckReport:
    mode: str
    checked: int
    max_error: float
    tolerance: float
    worst: str = ""

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_error < self.tolerance

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.mode}: {self.checked} checks, max error {self.max_error:.3g} (tol {self.tolerance:g}) {self.worst}"


def _outputs(out):
    return out if isinstance(out, tuple) else (out,)


def _fp_check(fragment, x, rng, tol, max_entries, h=1e-6) -> GradCheckReport:
    with precision(np.float64):
        frag = copy.deepcopy(fragment).astype(np.float64)
        x = np.asarray(x, dtype=np.float64)
        outs = _outputs(frag.forward(x, train=True))
        proj = [rng.standard_normal(o.shape) for o in outs]

        def objective(inp):
            return sum(float(np.sum(o * r)) for o, r in zip(_outputs(frag.forward(inp)), proj))

        frag.zero_grad()
        frag.forward(x, train=True)
        gx = frag.backward(*proj)
        targets = [("input", x, np.asarray(gx))]
        targets += [(n, p, g) for (n, p), (_, g) in zip(frag.named_parameters(), frag.named_grads())]
        grads_copy = [(n, p, g.copy()) for n, p, g in targets]
        worst, worst_name, count = 0.0, "", 0
        for name, arr, analytic in grads_copy:
            flat = arr.reshape(-1)
            picks = rng.choice(flat.size, size=min(max_entries, flat.size), replace=False)
            for k in picks:
                old = flat[k]
                flat[k] = old + h
                fp = objective(x)
                flat[k] = old - h
                fm = objective(x)
                flat[k] = old
                num = (fp - fm) / (2 * h)
                ana = float(analytic.reshape(-1)[k])
                err = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
                count += 1
                if err > worst:
                    worst, worst_name = err, f"worst at {name}[{k}]: analytic {ana:.6g} vs numeric {num:.6g}"
    return GradCheckReport("fp", count, worst, tol, worst_name)


def published_rsign_derivatives(x: float, alpha: float, beta: float) -> tuple[float, float, float]:
    """Scalar (d/dx, d/dalpha, d/dbeta) evaluated branch by branch from the published formulas."""
    u = (x - beta) / alpha
    if x <= beta - alpha:
        da = -1.0
    elif x <= beta:
        da = -2 * u ** 2 - 2 * u - 1
    elif x <= beta + alpha:
        da = 2 * u ** 2 - 2 * u + 1
    else:
        da = 1.0
    if beta - alpha < x <= beta:
        db = -2 - 2 * u
    elif beta < x <= beta + alpha:
        db = -2 + 2 * u
    else:
        db = 0.0
    if -1 < u <= 0:
        dx = 2 + 2 * u
    elif 0 < u <= 1:
        dx = 2 - 2 * u
    else:
        dx = 0.0
    return dx, da, db


def _ste_check(backward, rng, n_points, tol) -> GradCheckReport:
    worst, worst_name = 0.0, ""
    for i in range(n_points):
        alpha = float(rng.uniform(0.05, 3.0))
        beta = float(rng.uniform(-1.0, 1.0))
        x = float(beta + alpha * rng.uniform(-1.6, 1.6))
        xt = np.full((1, 1, 1, 1), x, dtype=np.float64)
        _, cache = rsign_forward(xt, RSignParams(alpha, np.array([beta], dtype=np.float64)))
        gx, ga, gb = backward(np.ones_like(xt), cache)
        got = (float(gx.reshape(-1)[0]), float(ga), float(np.asarray(gb).reshape(-1)[0]))
        want = published_rsign_derivatives(x, alpha, beta)
        for label, g, w in zip(("dx", "dalpha", "dbeta"), got, want):
            err = abs(g - w)
            if err > worst:
                worst, worst_name = err, f"worst {label} at x={x:.6g}, alpha={alpha:.6g}, beta={beta:.6g}"
    return GradCheckReport("ste", 3 * n_points, worst, tol, worst_name)


def grad_check(fragment, mode: str = "fp", *, x=None, seed: int = 0, n_points: int = 10_000,
               max_entries: int = 40, tol: float | None = None) -> GradCheckReport:
    """Verify a backward pass.

    ``mode="fp"``: ``fragment`` is a layer with ``forward(x, train)`` and
    ``backward(*grads)``; analytic gradients of a random projection of its
    outputs are compared with central differences in float64 (tolerance
    1e-4 relative).  ``mode="ste"``: ``fragment`` is an RSign backward
    function (``rsign_backward`` by default) checked against the published
    branch formulas at ``n_points`` random points (tolerance 1e-6 absolute).
    """
    rng = np.random.default_rng(seed)
    if mode == "fp":
        if x is None:
            raise ValueError("fp mode needs an input tensor x")
        return _fp_check(fragment, x, rng, 1e-4 if tol is None else tol, max_entries)
    if mode == "ste":
        return _ste_check(fragment or rsign_backward, rng, n_points, 1e-6 if tol is None else tol)
    raise ValueError(f"unknown grad_check mode {mode!r}")
