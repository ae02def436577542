"""Finite-difference certification of the analytic batch-norm backward passes.

The probe loss is linear, loss(y) = Σ p∘y with fixed random coefficients p,
so ∂ℓ/∂y = p exactly and any disagreement is attributable to the backward
pass under test.  Central differences with a small step on double precision
give numeric gradients good to ~1e-9 relative, comfortably below the 1e-5
acceptance threshold.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .batchnorm import (
    BnMode,
    BnParams,
    batch_axes,
    bn_backward_l1_naive,
    bn_backward_l1_simplified,
    bn_backward_l2,
    bn_forward_train,
)
from .tensor import Rng

REL_ERR_FLOOR = 1e-8  # denominator floor: avoids blowup where both gradients ~ 0


class EvaluationError(ValueError):
    """Probe function returned a non-finite value."""


class DegenerateInputError(ValueError):
    """Could not draw a batch clear of the |x - μ| kink within the retry cap."""


@dataclass
class ProbeLoss:
    """Linear scalar loss with an exact, input-independent gradient."""

    projection: np.ndarray

    def __call__(self, y: np.ndarray) -> float:
        return float(np.sum(self.projection * y))

    def grad(self) -> np.ndarray:
        return self.projection


def finite_diff(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, one coordinate at a time."""
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        hi = x.copy()
        hi[idx] += step
        lo = x.copy()
        lo[idx] -= step
        f_hi, f_lo = f(hi), f(lo)
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            raise EvaluationError(f"non-finite probe value near coordinate {idx}")
        grad[idx] = (f_hi - f_lo) / (2.0 * step)
    return grad


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_ERR_FLOOR)
    return np.abs(analytic - numeric) / denom


@dataclass
class ParamCheck:
    """Error summary for one gradient slot (input, gamma, or beta)."""

    max_rel_err: float
    max_abs_err: float
    worst_index: tuple[int, ...]


@dataclass
class GradReport:
    """Analytic-vs-numeric comparison for one layer configuration."""

    mode: str
    shape: tuple[int, ...]
    seed: int
    step: float
    input: ParamCheck
    gamma: ParamCheck
    beta: ParamCheck
    max_rel_err: float
    max_abs_err: float
    worst_param: str
    # max relative gap between the two L1 backward forms; None for L2
    backward_agreement: float | None = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["shape"] = list(self.shape)
        for slot in ("input", "gamma", "beta"):
            d[slot]["worst_index"] = list(d[slot]["worst_index"])
        return d


def _param_check(analytic: np.ndarray, numeric: np.ndarray) -> ParamCheck:
    rel = relative_errors(analytic, numeric)
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    return ParamCheck(
        max_rel_err=float(rel.max()) if rel.size else 0.0,
        max_abs_err=float(np.abs(analytic - numeric).max()) if rel.size else 0.0,
        worst_index=tuple(int(i) for i in worst),
    )


def draw_inputs(mode: BnMode, shape, rng: Rng, tie_margin: float = 1e-3,
                max_resamples: int = 100) -> np.ndarray:
    """Sample a standard-normal batch; for L1 modes resample until every element
    sits at least ``tie_margin`` away from its pooled mean (|x-μ| is not
    differentiable at the tie)."""
    axes = batch_axes(shape)
    for _ in range(max_resamples):
        x = rng.normal(shape)
        if mode is BnMode.L2:
            return x
        mu = np.mean(x, axis=axes)
        if np.min(np.abs(x - mu)) > tie_margin:
            return x
    raise DegenerateInputError(
        f"no tie-free batch of shape {tuple(shape)} in {max_resamples} draws"
    )


def check_layer(mode: BnMode, shape, seed: int = 0, step: float = 1e-6,
                epsilon: float = 1e-5, tie_margin: float = 1e-3,
                max_resamples: int = 100) -> GradReport:
    """Run one forward/backward pair against the finite-difference oracle."""
    shape = tuple(shape)
    if np.prod([shape[a] for a in batch_axes(shape)]) < 4:
        raise ValueError("pooled count must be at least 4 for a meaningful check")
    rng = Rng(seed)
    x = draw_inputs(mode, shape, rng, tie_margin, max_resamples)
    c = shape[-1]
    gamma = rng.uniform((c,), 0.5, 1.5)
    beta = rng.uniform((c,), -0.5, 0.5)
    params = BnParams(gamma=gamma, beta=beta, epsilon=epsilon, mode=mode)
    probe = ProbeLoss(projection=rng.normal(shape))

    _, cache = bn_forward_train(x, params)
    agreement = None
    if mode is BnMode.L2:
        bundles = [bn_backward_l2(probe.grad(), cache, params)]
    else:
        naive = bn_backward_l1_naive(probe.grad(), cache, params)
        simplified = bn_backward_l1_simplified(probe.grad(), cache, params)
        agreement = float(relative_errors(naive.d_input, simplified.d_input).max())
        bundles = [naive, simplified]

    def loss_of_x(xv):
        y, _ = bn_forward_train(xv, params)
        return probe(y)

    def loss_of_gamma(gv):
        p = BnParams(gamma=gv, beta=beta, epsilon=epsilon, mode=mode)
        y, _ = bn_forward_train(x, p)
        return probe(y)

    def loss_of_beta(bv):
        p = BnParams(gamma=gamma, beta=bv, epsilon=epsilon, mode=mode)
        y, _ = bn_forward_train(x, p)
        return probe(y)

    num_input = finite_diff(loss_of_x, x, step)
    num_gamma = finite_diff(loss_of_gamma, gamma, step)
    num_beta = finite_diff(loss_of_beta, beta, step)

    # report the worse of the two L1 forms so both are certified at once
    checks = {
        "input": max((_param_check(b.d_input, num_input) for b in bundles),
                     key=lambda ch: ch.max_rel_err),
        "gamma": max((_param_check(b.d_gamma, num_gamma) for b in bundles),
                     key=lambda ch: ch.max_rel_err),
        "beta": max((_param_check(b.d_beta, num_beta) for b in bundles),
                    key=lambda ch: ch.max_rel_err),
    }
    worst_param = max(checks, key=lambda k: checks[k].max_rel_err)
    return GradReport(
        mode=mode.value,
        shape=shape,
        seed=seed,
        step=step,
        input=checks["input"],
        gamma=checks["gamma"],
        beta=checks["beta"],
        max_rel_err=checks[worst_param].max_rel_err,
        max_abs_err=max(ch.max_abs_err for ch in checks.values()),
        worst_param=worst_param,
        backward_agreement=agreement,
    )
