"""Label-wise propensity model families, probability adjustment and diagnostics.

All evaluated propensities are clamped into ``(P_MIN, 1]`` so that inverse
propensities stay finite even in degenerate parameter regimes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import LabelPriors

P_MIN = 1e-6

FAMILIES = ("constant", "freq_sigmoid", "power_law", "richards", "direct")

# parameter names, in canonical order, per family
FAMILY_PARAMS = {
    "constant": ("p",),
    "freq_sigmoid": ("a", "b", "n"),
    "power_law": ("beta", "gamma"),
    "richards": ("c", "d", "e", "f", "g", "h"),
}


class DegenerateRegimeWarning(UserWarning):
    """Parameters put the model outside its sensible codomain; values were clamped."""


def clamp(p):
    return np.clip(p, P_MIN, 1.0)


@dataclass(frozen=True)
class PropensityModelSpec:
    """A parameterized propensity family.

    ``params`` maps parameter names to floats; the ``direct`` family instead
    carries a per-label ``table`` array.
    """

    family: str
    params: dict

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family '{self.family}'")
        if self.family == "direct":
            if "table" not in self.params:
                raise ValueError("direct family requires a 'table' entry")
        else:
            missing = set(FAMILY_PARAMS[self.family]) - set(self.params)
            if missing:
                raise ValueError(f"{self.family} missing parameters: {sorted(missing)}")

    def to_text(self) -> str:
        """Flat key-value block used inside experiment configs."""
        lines = [f"family = {self.family}"]
        if self.family == "direct":
            table = np.asarray(self.params["table"], dtype=np.float64)
            lines.append("table = " + ",".join(repr(float(v)) for v in table))
        else:
            for name in FAMILY_PARAMS[self.family]:
                lines.append(f"{name} = {float(self.params[name])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PropensityModelSpec":
        kv = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"malformed spec line: '{raw}'")
            kv[key.strip()] = value.strip()
        if "family" not in kv:
            raise ValueError("spec block missing 'family'")
        family = kv.pop("family")
        if family == "direct":
            table = np.array([float(v) for v in kv["table"].split(",")])
            return cls(family="direct", params={"table": table})
        params = {k: float(v) for k, v in kv.items()}
        return cls(family=family, params=params)


@dataclass(frozen=True)
class PropensityAssignment:
    """Per-label propensities in ``(0, 1]`` with provenance."""

    m: int
    p: np.ndarray
    source: str

    def __post_init__(self):
        if len(self.p) != self.m:
            raise ValueError("propensity vector length must equal m")
        if np.any(self.p <= 0) or np.any(self.p > 1):
            raise ValueError("propensities must lie in (0, 1]")

    def inverse(self) -> np.ndarray:
        return 1.0 / self.p


def eval_freq_sigmoid(prior, n: int, a: float, b: float):
    """Sigmoid-in-log-frequency propensity: 1 / (1 + (ln n - 1)(b+1)^a (n*prior + b)^-a).

    Accepts scalars or arrays; the result is clamped into ``(P_MIN, 1]``.  For
    n < 3 the raw formula leaves (0, 1] and a :class:`DegenerateRegimeWarning`
    is issued.
    """
    prior = np.asarray(prior, dtype=np.float64)
    if n < 1:
        raise ValueError("n must be >= 1")
    if np.any(n * prior + b <= 0):
        raise ValueError("n*prior + b must be positive")
    if n < 3:
        warnings.warn("ln(n) - 1 <= 0 for n < 3: values leave (0, 1] and are clamped",
                      DegenerateRegimeWarning, stacklevel=2)
    # (n*prior + b)^-a via exp/log keeps the computation stable for huge n
    with np.errstate(over="ignore", invalid="ignore"):
        decay = np.exp(-a * np.log(n * prior + b))
        raw = 1.0 / (1.0 + (np.log(n) - 1.0) * (b + 1.0) ** a * decay)
    out = clamp(raw)
    return out if out.ndim else float(out)


def eval_power(prior, beta: float, gamma: float):
    """Power-law propensity (beta * prior)^gamma, clamped into ``(P_MIN, 1]``."""
    prior = np.asarray(prior, dtype=np.float64)
    if np.any(beta * prior <= 0):
        raise ValueError("beta * prior must be positive")
    out = clamp((beta * prior) ** gamma)
    return out if out.ndim else float(out)


def eval_richards(prior, c: float, d: float, e: float, f: float, g: float, h: float):
    """Generalized logistic propensity c + (d - c)/(e + f*exp(-g*prior))^(1/h)."""
    prior = np.asarray(prior, dtype=np.float64)
    if h == 0:
        raise ValueError("h must be nonzero")
    base = e + f * np.exp(-g * prior)
    if np.any(base <= 0):
        raise ValueError("e + f*exp(-g*prior) must be positive over the evaluated domain")
    out = clamp(c + (d - c) / base ** (1.0 / h))
    return out if out.ndim else float(out)


def adjust_probability(eta_obs, p):
    """Recover the clean conditional probability: min(eta_obs / p, 1)."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("propensity must lie in (0, 1]")
    out = np.minimum(np.asarray(eta_obs, dtype=np.float64) / p, 1.0)
    return out if out.ndim else float(out)


def direct_estimate(priors_train: LabelPriors, priors_val: LabelPriors,
                    p_controlled) -> PropensityAssignment:
    """Estimate per-label training propensities from a bias-controlled validation set.

    ``p[j] = clamp(prior_train[j] * p_controlled[j] / prior_val[j])`` where
    ``p_controlled`` is the known bias of the validation set (scalar or vector).
    """
    if priors_train.m != priors_val.m:
        raise ValueError("prior vectors must share m")
    pc = np.broadcast_to(np.asarray(p_controlled, dtype=np.float64), (priors_train.m,))
    if np.any(pc <= 0) or np.any(pc > 1):
        raise ValueError("controlled propensity must lie in (0, 1]")
    if np.any(priors_val.priors <= 0):
        raise ValueError("validation priors must be positive (use smoothing)")
    p = clamp(priors_train.priors * pc / priors_val.priors)
    return PropensityAssignment(m=priors_train.m, p=p, source="direct")


def assign(spec: PropensityModelSpec, priors: LabelPriors) -> PropensityAssignment:
    """Evaluate a model family on per-label priors."""
    q = spec.params
    if spec.family == "constant":
        p = clamp(np.full(priors.m, float(q["p"])))
    elif spec.family == "freq_sigmoid":
        p = np.atleast_1d(eval_freq_sigmoid(priors.priors, int(q["n"]), q["a"], q["b"]))
    elif spec.family == "power_law":
        p = np.atleast_1d(eval_power(priors.priors, q["beta"], q["gamma"]))
    elif spec.family == "richards":
        p = np.atleast_1d(eval_richards(priors.priors, q["c"], q["d"], q["e"],
                                        q["f"], q["g"], q["h"]))
    elif spec.family == "direct":
        table = np.asarray(q["table"], dtype=np.float64)
        if len(table) != priors.m:
            raise ValueError("direct table length must equal m")
        p = clamp(table)
    else:  # pragma: no cover - guarded in the spec constructor
        raise ValueError(spec.family)
    return PropensityAssignment(m=priors.m, p=p, source=spec.family)


@dataclass(frozen=True)
class ScalingDiagnostic:
    points: tuple                    # ((n, p), ...) along the grid
    eventually_increasing: bool      # is some suffix of the sequence monotone increasing
    terminal: float                  # value at the largest n


def scaling_diagnostic(a: float, b: float, prior: float,
                       n_grid: Sequence[int]) -> ScalingDiagnostic:
    """Trace the n-dependence of the frequency-sigmoid model along a grid of dataset sizes."""
    grid = [int(n) for n in n_grid]
    if any(x > y for x, y in zip(grid, grid[1:])):
        raise ValueError("n_grid must be sorted ascending")
    if any(n < 3 for n in grid):
        raise ValueError("n_grid entries must be >= 3")
    values = [float(eval_freq_sigmoid(prior, n, a, b)) for n in grid]
    increasing_from = len(values) - 1
    for i in range(len(values) - 1, 0, -1):
        if values[i] > values[i - 1]:
            increasing_from = i - 1
        else:
            break
    eventually = increasing_from < len(values) - 1 or len(values) == 1
    return ScalingDiagnostic(points=tuple(zip(grid, values)),
                             eventually_increasing=eventually,
                             terminal=values[-1])


# parameter sets reported for the frequency-sigmoid model
FREQ_SIGMOID_WIKIPEDIA = {"a": 0.5, "b": 0.4}
FREQ_SIGMOID_AMAZON = {"a": 0.6, "b": 2.6}
FREQ_SIGMOID_DEFAULT = {"a": 0.55, "b": 1.5}
