"""DDPM core in k-space and the guided sampling loop.

One reverse step at level ``t``:

    DC -> clean estimate -> x-t prior -> k-t kernel -> CG -> recombination
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .cg import CGConfig, cg_refine, objective
from .encoding import EncodingOperator, to_image, to_kspace
from .metrics import nmse
from .priors import PriorStack, apply_kt_kernel

log = logging.getLogger(__name__)


class NonFiniteStateError(FloatingPointError):
    def __init__(self, step):
        super().__init__(f"non-finite diffusion state at step {step}")
        self.step = step


@dataclass
class NoiseSchedule:
    """Tables indexed by step ``t = 0..T`` (entry 0 is the clean state)."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta) - 1

    @classmethod
    def from_betas(cls, betas):
        betas = np.asarray(betas, dtype=np.float64)
        if np.any(betas < 0) or np.any(betas >= 1):
            raise ValueError("betas must lie in [0, 1)")
        beta = np.concatenate([[0.0], betas])
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        var = np.zeros_like(beta)
        var[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
        return cls(beta, alpha, alpha_bar, np.sqrt(var))


def cosine_schedule(T: int, s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    if T < 2:
        raise ValueError("the cosine schedule needs T >= 2")
    t = np.arange(T + 1) / T
    f = np.cos((t + s) / (1 + s) * np.pi / 2) ** 2
    ab = f / f[0]
    betas = np.minimum(1.0 - ab[1:] / ab[:-1], max_beta)
    return NoiseSchedule.from_betas(betas)


def complex_normal(rng, shape):
    """Standard complex Gaussian: real and imaginary parts each N(0, 1/2)."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _check_t(t, sched, lo=0):
    if not lo <= t <= sched.T:
        raise ValueError(f"step {t} outside {lo}..{sched.T}")


def q_sample(y0, t, eps, sched: NoiseSchedule):
    y0, eps = np.asarray(y0), np.asarray(eps)
    if y0.shape != eps.shape:
        raise ValueError(f"y0 {y0.shape} and eps {eps.shape} differ")
    _check_t(t, sched)
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * y0 + np.sqrt(1.0 - ab) * eps


def data_consistency(y_t, y_meas, m, lam: float):
    """``M (lam y_meas + (1 - lam) y_t) + (1 - M) y_t``; unsampled entries untouched."""
    y_t, y_meas = np.asarray(y_t), np.asarray(y_meas)
    mask = np.asarray(getattr(m, "mask", m), dtype=bool)
    if y_t.shape != y_meas.shape or y_t.shape[1:] != mask.shape:
        raise ValueError(f"shapes differ: state {y_t.shape}, data {y_meas.shape}, mask {mask.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"DC weight {lam} outside [0, 1]")
    if lam == 1.0:
        return np.where(mask[None], y_meas, y_t)
    if lam == 0.0:
        return y_t.copy()
    return np.where(mask[None], lam * y_meas + (1.0 - lam) * y_t, y_t)


def predict_clean(y_t, eps_hat, t, sched: NoiseSchedule):
    _check_t(t, sched, lo=1)
    ab = sched.alpha_bar[t]
    return (np.asarray(y_t) - np.sqrt(1.0 - ab) * np.asarray(eps_hat)) / np.sqrt(ab)


def reverse_coefficients(t, sched: NoiseSchedule):
    """Weights of ``y_t`` and of the refined clean estimate in ``y_{t-1}``."""
    _check_t(t, sched, lo=1)
    ab, ab_prev, beta = sched.alpha_bar[t], sched.alpha_bar[t - 1], sched.beta[t]
    c_state = np.sqrt(ab) * (1.0 - ab_prev) / (1.0 - ab)
    c_clean = np.sqrt(ab_prev) * beta / (1.0 - ab)
    return c_state, c_clean


def reverse_step(y_t, y0_refined, t, z, sched: NoiseSchedule):
    c_state, c_clean = reverse_coefficients(t, sched)
    out = c_state * np.asarray(y_t) + c_clean * np.asarray(y0_refined)
    if t > 1:
        out = out + sched.sigma[t] * np.asarray(z)
    return out


@dataclass
class DCConfig:
    """DC weight per step: ``lam`` throughout, or a linear ramp towards ``lam_end`` at t = 1."""

    lam: float = 1.0
    lam_end: float | None = None

    def __post_init__(self):
        for v in (self.lam, self.lam_end):
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"DC weight {v} outside [0, 1]")

    def weight(self, t, T):
        if self.lam_end is None or T <= 1:
            return self.lam
        frac = (T - t) / (T - 1)
        return self.lam + frac * (self.lam_end - self.lam)


def _xt_step(y0, model, sens, t):
    return to_kspace(model(to_image(y0, sens), t), sens)


def sample(
    y_meas,
    op: EncodingOperator,
    priors: PriorStack,
    sched: NoiseSchedule,
    dc: DCConfig | None = None,
    cg: CGConfig | None = None,
    seed=0,
    reference=None,
    diagnostics=None,
    terminal_dc: bool = True,
):
    """Run the guided reverse diffusion from ``y_T ~ N(0, I)`` down to ``y_0``.

    Parameters
    ----------
    y_meas : ndarray
        Measured multi-coil k-space ``[coil, time, row, col]``, zero off-mask.
    op : EncodingOperator
        Coil maps and sampling mask.
    priors : PriorStack
        Noise predictor with optional x-t model and k-t kernel.
    cg : CGConfig, optional
        Per-step CG refinement; ``None`` or ``max_iters == 0`` disables it.
    reference : ndarray, optional
        Ground-truth k-space; enables the per-step NMSE diagnostic.
    diagnostics : path or list, optional
        Receives one ``(step, objective, nmse)`` row per reverse step.  A
        path is written as CSV, a list is appended to.
    terminal_dc : bool
        Hard-replace sampled entries with the measurement after the loop.

    Returns
    -------
    ndarray
        The final k-space estimate ``y_0``.
    """
    dc = dc or DCConfig()
    y_meas = np.asarray(y_meas, dtype=np.complex128)
    if y_meas.shape != op.kspace_shape:
        raise ValueError(f"measurement {y_meas.shape} does not match operator {op.kspace_shape}")
    sens = op.sens
    use_cg = cg is not None and cg.max_iters > 0
    obj_cfg = cg if cg is not None else CGConfig(lambda_td=0.0)
    rng = np.random.default_rng(seed)
    rows = []
    y = complex_normal(rng, y_meas.shape)
    T = sched.T
    for t in range(T, 0, -1):
        y = data_consistency(y, y_meas, op.mask, dc.weight(t, T))
        y0 = predict_clean(y, priors.predictor(y, t), t, sched)
        if priors.xt is not None:
            y0 = _xt_step(y0, priors.xt, sens, t)
        if priors.kt is not None:
            y0 = apply_kt_kernel(y0, priors.kt, op.mask if priors.kt_blend else None)
        if use_cg:
            res = cg_refine(y0, y_meas, op.mask, sens, cg)
            y0, obj = res.y, res.objective
        else:
            obj = objective(y0, y_meas, op.mask, sens, obj_cfg)
        z = complex_normal(rng, y.shape) if t > 1 else 0.0
        y = reverse_step(y, y0, t, z, sched)
        if not np.all(np.isfinite(y)):
            raise NonFiniteStateError(t)
        err = nmse(y, reference) if reference is not None else float("nan")
        rows.append((t, obj, err))
        log.debug("step %d objective %.6g nmse %.3g", t, obj, err)
    if terminal_dc:
        y = data_consistency(y, y_meas, op.mask, 1.0)
    if isinstance(diagnostics, list):
        diagnostics.extend(rows)
    elif diagnostics is not None:
        write_diagnostics(rows, diagnostics)
    return y


def write_diagnostics(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "objective", "nmse"])
        for step, obj, err in rows:
            w.writerow([step, repr(float(obj)), repr(float(err))])


@dataclass
class TrainingLosses:
    l_noise: float
    l_xt: float
    l_kt: float
    total: float


def acs_block(y, m) -> np.ndarray:
    """ACS selector: the fully sampled centre rows of every frame."""
    start, stop = m.acs_rows
    if stop <= start:
        raise ValueError("mask has an empty ACS region")
    return np.asarray(y)[:, :, start:stop, :]


def training_losses(y0, m, t, eps, priors: PriorStack, sched, dc=None, sens=None, lambda_xt=1.0, lambda_kt=1.0):
    """Evaluate the three loss terms of one training draw (no parameter update)."""
    dc = dc or DCConfig()
    y0 = np.asarray(y0)
    y_meas = np.where(np.asarray(m.mask)[None], y0, 0)
    y_acs = acs_block(y_meas, m)
    y_t = q_sample(y0, t, eps, sched)
    y_t = data_consistency(y_t, y_meas, m, dc.weight(t, sched.T))
    eps_hat = priors.predictor(y_t, t)
    l_noise = float(np.sum(np.abs(eps - eps_hat) ** 2))
    clean = predict_clean(y_t, eps_hat, t, sched)
    if priors.xt is not None:
        if sens is None:
            raise ValueError("the x-t loss needs coil maps")
        clean = _xt_step(clean, priors.xt, sens, t)
    l_xt = float(np.sum(np.abs(y0 - clean) ** 2))
    if priors.kt is not None:
        l_kt = float(np.sum(np.abs(y_acs - apply_kt_kernel(y_acs, priors.kt)) ** 2))
    else:
        l_kt = 0.0
    return TrainingLosses(l_noise, l_xt, l_kt, l_noise + lambda_xt * l_xt + lambda_kt * l_kt)
