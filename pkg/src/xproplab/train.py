"""One-vs-all linear probabilistic classifiers with vanilla, unbiased and
joint-propensity losses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import SparseDataset
from .metrics import PredictionMatrix
from .propensity import PropensityAssignment

EPS = 1e-12

LOSSES = ("vanilla", "unbiased", "pejl_plug", "pejl_mask")


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def _clamp_prob(f):
    return np.clip(f, EPS, 1.0 - EPS)


def loss_vanilla(y: float, f: float):
    """Binary cross-entropy; returns (value, d/df)."""
    f = float(_clamp_prob(f))
    value = -y * math.log(f) - (1.0 - y) * math.log(1.0 - f)
    grad = -y / f + (1.0 - y) / (1.0 - f)
    return value, grad


def loss_unbiased(y: float, p: float, f: float):
    """Inverse-propensity-weighted cross-entropy; returns (value, d/df).

    The coefficient (1 - y/p) goes negative for observed positives with p < 1;
    that is what makes the loss unbiased and it is deliberately not clamped.
    """
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    f = float(_clamp_prob(f))
    t = y / p
    value = -t * math.log(f) - (1.0 - t) * math.log(1.0 - f)
    grad = -t / f + (1.0 - t) / (1.0 - f)
    return value, grad


def loss_pejl_plug(y: float, p: float, f: float):
    """Joint loss on the product p*f as the clean-probability estimate;
    returns (value, d/df, d/dp)."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    f = float(_clamp_prob(f))
    q = float(_clamp_prob(p * f))
    value = -y * math.log(q) - (1.0 - y) * math.log(1.0 - q)
    common = -y / q + (1.0 - y) / (1.0 - q)
    return value, common * p, common * f


def loss_pejl_mask(y: float, eta_hat: float, phi: float):
    """Mask-model loss: unbiased cross-entropy on the mask variable with the
    clean-probability estimate in the reweighting role; returns (value, d/dphi)."""
    if not EPS < eta_hat < 1:
        raise ValueError("eta_hat must lie in (eps, 1)")
    phi = float(_clamp_prob(phi))
    t = y / eta_hat
    value = -t * math.log(phi) - (1.0 - t) * math.log(1.0 - phi)
    grad = -t / phi + (1.0 - t) / (1.0 - phi)
    return value, grad


@dataclass
class LinearOvaModel:
    """m x d weight matrix + bias; joint-propensity training adds per-label
    propensity logits."""

    W: np.ndarray
    bias: np.ndarray
    prop_logits: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def propensities(self) -> Optional[np.ndarray]:
        if self.prop_logits is None:
            return None
        return sigmoid(self.prop_logits)


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "vanilla"
    propensities: Optional[PropensityAssignment] = None
    lr_grid: tuple = (0.005, 0.01, 0.05, 0.1)
    wd_grid: tuple = (0.0, 1e-8, 1e-7, 1e-6)
    epochs: int = 100
    batch_size: int = 128
    patience: int = 5
    val_fraction: float = 0.10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss '{self.loss}'")
        if not self.lr_grid or not self.wd_grid:
            raise ValueError("hyperparameter grids must be non-empty")
        if not 0 < self.val_fraction < 0.5:
            raise ValueError("val_fraction must lie in (0, 0.5)")


class Adam:
    """Standard Adam with bias correction; weight decay is added to the gradient."""

    def __init__(self, shapes, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.wd = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params, grads):
        self.t += 1
        for i, (param, grad) in enumerate(zip(params, grads)):
            g = grad + self.wd * param
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _bce_matrix(t: np.ndarray, f: np.ndarray) -> float:
    f = _clamp_prob(f)
    return float(np.mean(-t * np.log(f) - (1.0 - t) * np.log(1.0 - f)))


def _cell_objective(loss, X, Y, W, bias, theta, p_vec):
    f = sigmoid(X @ W.T + bias)
    if loss in ("vanilla", "unbiased"):
        return _bce_matrix(Y / p_vec, f)
    if loss == "pejl_plug":
        return _bce_matrix(Y, sigmoid(theta) * f)
    # pejl_mask: unbiased objective with the current mask estimate as propensity
    return _bce_matrix(Y / sigmoid(theta), f)


def _train_cell(loss, X, Y, X_val, Y_val, p_vec, lr, wd, config, rng):
    n, d = X.shape
    m = Y.shape[1]
    k = 1.0 / d
    W = rng.uniform(-math.sqrt(k), math.sqrt(k), (m, d))
    bias = np.zeros(m)
    theta = None
    if loss in ("pejl_plug", "pejl_mask"):
        theta = rng.uniform(-math.e, math.e, m)

    if loss == "pejl_mask":
        # two fixed halves: even epochs train f on half A, odd epochs train phi on half B
        half_order = rng.permutation(n)
        half_a, half_b = half_order[: n // 2], half_order[n // 2:]

    params = [W, bias] + ([theta] if theta is not None else [])
    opt = Adam([p.shape for p in params], lr, wd,
               config.beta1, config.beta2, config.adam_eps)

    best = None
    best_val = np.inf
    bad_epochs = 0
    epochs_ran = 0
    T = Y / p_vec if loss in ("vanilla", "unbiased") else None

    for epoch in range(config.epochs):
        epochs_ran = epoch + 1
        if loss == "pejl_mask":
            phase_idx = half_a if epoch % 2 == 0 else half_b
            order = phase_idx[rng.permutation(len(phase_idx))]
        else:
            order = rng.permutation(n)
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            Xb = X[batch]
            f = sigmoid(Xb @ W.T + bias)
            scale = 1.0 / (len(batch) * m)
            if loss in ("vanilla", "unbiased"):
                G = (f - T[batch]) * scale
                grads = [G.T @ Xb, G.sum(axis=0)]
                if theta is not None:
                    grads.append(np.zeros_like(theta))
                opt.step(params, grads)
            elif loss == "pejl_plug":
                Yb = Y[batch]
                p_sig = sigmoid(theta)
                q = _clamp_prob(p_sig * f)
                common = (-Yb / q + (1.0 - Yb) / (1.0 - q)) * scale
                Gz = common * p_sig * f * (1.0 - f)
                Gtheta = (common * f).sum(axis=0) * p_sig * (1.0 - p_sig)
                opt.step(params, [Gz.T @ Xb, Gz.sum(axis=0), Gtheta])
            else:  # pejl_mask
                Yb = Y[batch]
                phi = sigmoid(theta)
                if epoch % 2 == 0:
                    # phi frozen, f trains with the unbiased loss
                    Gz = (f - Yb / phi) * scale
                    opt.step(params, [Gz.T @ Xb, Gz.sum(axis=0), np.zeros_like(theta)])
                else:
                    # f frozen, phi trains on the mask loss with eta_hat = f
                    eta_hat = np.clip(f, EPS, 1.0 - EPS)
                    t_mask = Yb / eta_hat
                    dphi = -t_mask / phi + (1.0 - t_mask) / (1.0 - phi)
                    Gtheta = (dphi * scale).sum(axis=0) * phi * (1.0 - phi)
                    opt.step(params, [np.zeros_like(W), np.zeros_like(bias), Gtheta])

        val_obj = _cell_objective(loss, X_val, Y_val, W, bias, theta, p_vec)
        if not np.isfinite(val_obj):
            return None, epochs_ran, np.inf
        if val_obj < best_val:
            best_val = val_obj
            best = (W.copy(), bias.copy(), None if theta is None else theta.copy())
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                break
    if best is None:
        return None, epochs_ran, np.inf
    return best, epochs_ran, best_val


def train_ova(train: SparseDataset, config: TrainConfig):
    """Grid-search lr x weight-decay with early stopping on a carved-out
    validation fraction of the (biased) training set; returns the best model
    and the full tuning log."""
    if train.n < 2:
        raise ValueError("training set too small")
    if config.loss == "unbiased":
        if config.propensities is None:
            raise ValueError("unbiased loss requires propensities")
        if config.propensities.m != train.m:
            raise ValueError("propensity assignment m must match the dataset")
        p_vec = config.propensities.p
    else:
        p_vec = np.ones(train.m)

    X = np.asarray(train.feature_matrix().todense())
    Y = train.label_matrix()

    ss = np.random.SeedSequence(config.seed)
    n_cells = len(config.lr_grid) * len(config.wd_grid)
    children = ss.spawn(n_cells + 1)
    split_rng = np.random.default_rng(children[0])
    order = split_rng.permutation(train.n)
    n_val = max(1, int(round(config.val_fraction * train.n)))
    val_idx, tr_idx = order[:n_val], order[n_val:]
    X_tr, Y_tr = X[tr_idx], Y[tr_idx]
    X_val, Y_val = X[val_idx], Y[val_idx]

    tuning_log = []
    best_state = None
    best_val = np.inf
    cell = 0
    for lr in config.lr_grid:
        for wd in config.wd_grid:
            rng = np.random.default_rng(children[cell + 1])
            state, epochs_ran, val_obj = _train_cell(
                config.loss, X_tr, Y_tr, X_val, Y_val, p_vec, lr, wd, config, rng)
            status = "ok" if state is not None else "failed"
            tuning_log.append({"lr": lr, "wd": wd, "val_objective": val_obj,
                               "epochs_ran": epochs_ran, "status": status})
            if state is not None and val_obj < best_val:
                best_val = val_obj
                best_state = state
            cell += 1
    if best_state is None:
        raise RuntimeError("all grid cells diverged")
    W, bias, theta = best_state
    return LinearOvaModel(W=W, bias=bias, prop_logits=theta), tuning_log


def predict(model: LinearOvaModel, dataset: SparseDataset) -> PredictionMatrix:
    """Per-instance sigmoid scores for every label."""
    if model.d != dataset.d:
        raise ValueError(f"model d={model.d} does not match dataset d={dataset.d}")
    X = dataset.feature_matrix()
    z = np.asarray(X @ model.W.T) + model.bias  # csr @ dense gives a dense array
    return PredictionMatrix(n=dataset.n, m=model.m, scores=sigmoid(z))


CHECKPOINT_VERSION = 1


def save_model(model: LinearOvaModel, path, config_hash: str = "") -> None:
    payload = {"version": np.array(CHECKPOINT_VERSION),
               "W": model.W, "bias": model.bias,
               "config_hash": np.array(config_hash)}
    if model.prop_logits is not None:
        payload["prop_logits"] = model.prop_logits
    np.savez(path, **payload)


def load_model(path) -> LinearOvaModel:
    with np.load(path, allow_pickle=False) as data:
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(data['version'])}")
        prop = data["prop_logits"] if "prop_logits" in data.files else None
        return LinearOvaModel(W=data["W"], bias=data["bias"],
                              prop_logits=None if prop is None else np.array(prop))
