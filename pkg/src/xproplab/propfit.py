"""Levenberg-Marquardt fitting of propensity families to inverse-propensity targets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import LabelPriors
from .propensity import (FAMILY_PARAMS, P_MIN, PropensityAssignment,
                         PropensityModelSpec, assign, clamp,
                         eval_freq_sigmoid, eval_power, eval_richards)


@dataclass(frozen=True)
class FitProblem:
    """Targets are direct (bias-controlled) propensity estimates; ``fixed`` pins
    parameters that are not free during the fit (e.g. the dataset size of the
    frequency-sigmoid family)."""

    priors: np.ndarray
    targets: np.ndarray
    family: str
    fixed: dict = field(default_factory=dict)
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        priors = np.asarray(self.priors, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "targets", targets)
        if len(priors) != len(targets):
            raise ValueError("priors and targets must have equal length")
        if np.any(targets <= 0) or np.any(targets > 1):
            raise ValueError("targets must lie in (0, 1]")
        if np.any(priors <= 0) or np.any(priors >= 1):
            raise ValueError("priors must lie in (0, 1)")
        if self.family not in FAMILY_PARAMS:
            raise ValueError(f"cannot fit family '{self.family}'")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            object.__setattr__(self, "weights", w)
            if len(w) != len(targets) or np.any(w < 0):
                raise ValueError("weights must be non-negative, one per label")

    @property
    def free_names(self) -> tuple:
        return tuple(n for n in FAMILY_PARAMS[self.family] if n not in self.fixed)

    def param_dict(self, theta: np.ndarray) -> dict:
        params = dict(self.fixed)
        params.update(zip(self.free_names, theta))
        return params

    def effective_weights(self) -> np.ndarray:
        if self.weights is not None:
            return self.weights
        # targets clamped at the codomain floor are clamp artifacts, not data
        return np.where(self.targets <= P_MIN, 0.0, 1.0)


@dataclass(frozen=True)
class FitResult:
    params: dict          # full parameter dict (free + fixed)
    mse: float            # weighted mean squared error on inverse propensities
    iterations: int
    converged: bool

    def spec(self, family: str) -> PropensityModelSpec:
        return PropensityModelSpec(family=family, params=self.params)


@dataclass(frozen=True)
class LMConfig:
    max_iter: int = 200
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    tol: float = 1e-10
    lambda_max: float = 1e12


def _family_eval(family: str, priors: np.ndarray, params: dict) -> np.ndarray:
    if family == "constant":
        return clamp(np.full(len(priors), float(params["p"])))
    if family == "freq_sigmoid":
        return np.atleast_1d(eval_freq_sigmoid(priors, int(params["n"]), params["a"], params["b"]))
    if family == "power_law":
        return np.atleast_1d(eval_power(priors, params["beta"], params["gamma"]))
    if family == "richards":
        return np.atleast_1d(eval_richards(priors, params["c"], params["d"], params["e"],
                                           params["f"], params["g"], params["h"]))
    raise ValueError(family)


def _in_domain(family: str, priors: np.ndarray, params: dict) -> bool:
    try:
        if family == "freq_sigmoid":
            if params["n"] < 1 or np.any(params["n"] * priors + params["b"] <= 0):
                return False
        elif family == "power_law":
            if params["beta"] <= 0:
                return False
        elif family == "richards":
            if params["h"] == 0:
                return False
            if np.any(params["e"] + params["f"] * np.exp(-params["g"] * priors) <= 0):
                return False
        _family_eval(family, priors, params)
    except (ValueError, FloatingPointError):
        return False
    return True


def fit_mse(assignment: PropensityAssignment, targets) -> float:
    """Mean over labels of the squared inverse-propensity difference."""
    targets = np.asarray(targets, dtype=np.float64)
    if len(targets) != assignment.m:
        raise ValueError("targets length must equal m")
    if np.any(targets <= 0) or np.any(targets > 1):
        raise ValueError("targets must lie in (0, 1]")
    return float(np.mean((1.0 / targets - 1.0 / assignment.p) ** 2))


def lm_fit(problem: FitProblem, init, config: LMConfig = LMConfig()) -> FitResult:
    """Damped least squares on inverse propensities.

    Jacobian by central finite differences; a step is accepted iff it decreases
    the residual, with the damping factor multiplied by ``lambda_down`` on
    accept and ``lambda_up`` on reject.
    """
    if config.max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    theta = np.asarray(init, dtype=np.float64).copy()
    if len(theta) != len(problem.free_names):
        raise ValueError(f"init must have {len(problem.free_names)} entries "
                         f"({problem.free_names})")
    if not _in_domain(problem.family, problem.priors, problem.param_dict(theta)):
        raise ValueError("init violates the family domain")

    w = problem.effective_weights()
    sw = np.sqrt(w)
    inv_targets = 1.0 / problem.targets
    wsum = float(w.sum())

    def residuals(t):
        params = problem.param_dict(t)
        if not _in_domain(problem.family, problem.priors, params):
            return None
        pred = _family_eval(problem.family, problem.priors, params)
        if not np.all(np.isfinite(pred)):
            return None
        return sw * (inv_targets - 1.0 / pred)

    def jacobian(t, r0):
        J = np.empty((len(r0), len(t)))
        for k in range(len(t)):
            h = 1e-6 * max(abs(t[k]), 1.0)
            tp, tm = t.copy(), t.copy()
            tp[k] += h
            tm[k] -= h
            rp, rm = residuals(tp), residuals(tm)
            if rp is None or rm is None:
                # one-sided fallback at a domain edge
                if rp is None and rm is None:
                    J[:, k] = 0.0
                    continue
                if rp is None:
                    J[:, k] = (r0 - rm) / h
                else:
                    J[:, k] = (rp - r0) / h
            else:
                J[:, k] = (rp - rm) / (2 * h)
        return J

    r = residuals(theta)
    if r is None:
        raise ValueError("init produces non-finite predictions")
    obj = float(r @ r)
    lam = config.lambda0
    converged = False
    iterations = 0

    for iterations in range(1, config.max_iter + 1):
        J = jacobian(theta, r)
        g = J.T @ r
        if np.max(np.abs(g)) < config.tol:
            converged = True
            break
        A = J.T @ J
        diag = np.diag(A).copy()
        diag[diag <= 0] = 1.0
        accepted = False
        while lam <= config.lambda_max:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= config.lambda_up
                continue
            candidate = theta + step
            r_new = residuals(candidate)
            if r_new is not None:
                obj_new = float(r_new @ r_new)
                if np.isfinite(obj_new) and obj_new < obj:
                    rel_drop = (obj - obj_new) / max(obj, np.finfo(float).tiny)
                    theta, r, obj = candidate, r_new, obj_new
                    lam = max(lam * config.lambda_down, 1e-15)
                    accepted = True
                    if rel_drop < config.tol:
                        converged = True
                    break
            lam *= config.lambda_up
        if not accepted:
            break  # damping escalation exhausted: report best-so-far
        if converged:
            break

    mse = obj / wsum if wsum > 0 else 0.0
    return FitResult(params=problem.param_dict(theta), mse=float(mse),
                     iterations=iterations, converged=converged)


def default_inits(family: str, priors, targets) -> list:
    """A fixed 5-point initialization grid per family (full parameter dicts)."""
    priors = np.asarray(priors, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    t_mean = float(np.clip(targets.mean(), 0.05, 1.0))
    if family == "constant":
        return [{"p": v} for v in (t_mean, 0.1, 0.3, 0.7, 1.0)]
    if family == "freq_sigmoid":
        return [{"a": a, "b": b} for a, b in
                ((0.55, 1.5), (0.5, 0.4), (0.6, 2.6), (1.0, 1.0), (0.2, 5.0))]
    if family == "power_law":
        inv_max = 1.0 / float(priors.max())
        return [{"beta": b, "gamma": g} for b, g in
                ((1.0, 1.0), (1.0, 0.5), (inv_max, 0.5), (inv_max, 1.0), (1.0, 0.3))]
    if family == "richards":
        g0 = 1.0 / max(float(np.median(priors)), 1e-12)
        return [{"c": 0.0, "d": 1.0, "e": 1.0, "f": 1.0, "g": g0, "h": 1.0},
                {"c": 0.0, "d": 1.0, "e": 1.0, "f": 10.0, "g": g0, "h": 1.0},
                {"c": t_mean / 2, "d": 1.0, "e": 1.0, "f": 1.0, "g": g0 / 2, "h": 1.0},
                {"c": 0.0, "d": 1.0, "e": 1.0, "f": 5.0, "g": 2 * g0, "h": 2.0},
                {"c": 0.0, "d": 1.0, "e": 1.0, "f": 1.0, "g": g0 / 10, "h": 0.5}]
    raise ValueError(family)


def fit_family(priors_or_problem, targets=None, family: str = None,
               fixed: dict = None, config: LMConfig = LMConfig()) -> FitResult:
    """Fit one family from its default init grid and keep the best result."""
    if isinstance(priors_or_problem, FitProblem):
        problem = priors_or_problem
    else:
        priors = priors_or_problem
        if isinstance(priors, LabelPriors):
            priors = priors.priors
        problem = FitProblem(priors=priors, targets=targets, family=family,
                             fixed=fixed or {})
    best = None
    for init_params in default_inits(problem.family, problem.priors, problem.targets):
        init = [init_params[n] for n in problem.free_names]
        if not _in_domain(problem.family, problem.priors, problem.param_dict(init)):
            continue
        result = lm_fit(problem, init, config)
        if best is None or result.mse < best.mse:
            best = result
    if best is None:
        raise ValueError("no valid initialization for the family domain")
    return best
