"""Design-weight training: continuous soft-shrink descent and binary tabu search."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .exceptions import (
    DivergedError,
    ExhaustedError,
    ShapeError,
)
from .models import OdeModel, make_model
from .network import LFENet
from .risk import batch_risk
from .stochastic import generate_batch, rng_from

__all__ = [
    "soft_shrink",
    "update_w_continuous",
    "sparsity",
    "DesignWeights",
    "TrainConfig",
    "tabu_neighbors",
    "tabu_search",
    "ContinuousDesignEstimator",
    "TabuDesignEstimator",
]

DTYPE = torch.float64
SPARSITY_THRESHOLD = 1e-3


def soft_shrink(t, rho: float):
    """Shifted-down positive part: t - rho where t > rho, else 0."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if isinstance(t, torch.Tensor):
        return torch.clamp(t - rho, min=0.0)
    return np.maximum(np.asarray(t, dtype=np.float64) - rho, 0.0)


def update_w_continuous(w, dw, mu: float, rho: float):
    """One proximal step on the design weights: shrink after a gradient move."""
    return soft_shrink(w - mu * dw, rho)


def sparsity(w, threshold: float = SPARSITY_THRESHOLD) -> int:
    """Number of weights strictly above the threshold."""
    if isinstance(w, torch.Tensor):
        return int((w > threshold).sum())
    return int(np.count_nonzero(np.asarray(w) > threshold))


@dataclass
class DesignWeights:
    """A design vector over the candidate measurement times."""

    values: np.ndarray
    mode: str = "continuous"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise ShapeError("design weights must be a vector")
        if np.any(vals < 0):
            raise ValueError("design weights must be nonnegative")
        if self.mode not in ("continuous", "binary"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "binary" and not np.all(np.isin(vals, (0.0, 1.0))):
            raise ValueError("binary design weights must be 0 or 1")
        self.values = vals

    def sparsity(self, threshold: float = SPARSITY_THRESHOLD) -> int:
        return sparsity(self.values, threshold)

    def to_csv(self, path: str | Path, grid) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "t", "weight"])
            for i, (t, v) in enumerate(zip(grid.points, self.values)):
                writer.writerow([i, repr(float(t)), repr(float(v))])


@dataclass
class TrainConfig:
    """Hyper-parameters shared by both design-training methods."""

    batch_size: int = 3500
    gamma: float = 1.0
    lr_theta: float = 1e-3
    lr_w: float = 1e-3
    shrink_rho: float = 1e-3
    sparsity_target: int = 2
    phase1_cap: int = 200_000
    phase2_iters: int = 5000
    outer_iter: int = 10
    inner_iter: int = 500
    neighbor_subset: int = 10
    tabu_list_len: int = 8
    tabu_total_iters: int = 200
    pretrain_iters: int = 500
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "phase1_cap", "phase2_iters", "outer_iter",
                     "inner_iter", "neighbor_subset", "tabu_list_len",
                     "tabu_total_iters", "pretrain_iters"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.shrink_rho <= 0:
            raise ValueError("shrink_rho must be > 0")


def _fingerprint(w: np.ndarray) -> tuple:
    return tuple(np.flatnonzero(w > 0.5).tolist())


def tabu_neighbors(w: np.ndarray, k: int, rng: np.random.Generator,
                   tabu: "deque | list" = ()) -> list[np.ndarray]:
    """Up to ``k`` sparsity-preserving single-swap neighbors, tabu excluded."""
    w = np.asarray(w, dtype=np.float64)
    active = np.flatnonzero(w > 0.5)
    inactive = np.flatnonzero(w <= 0.5)
    tabu_set = set(tabu)
    candidates = []
    for i in active:
        for j in inactive:
            fp = tuple(sorted(set(active.tolist()) - {int(i)} | {int(j)}))
            if fp not in tabu_set:
                candidates.append((int(i), int(j)))
    if not candidates:
        raise ExhaustedError("every single-swap neighbor is on the tabu list")
    idx = rng.permutation(len(candidates))[: min(k, len(candidates))]
    out = []
    for m in sorted(idx.tolist()):
        i, j = candidates[m]
        nb = w.copy()
        nb[i], nb[j] = 0.0, 1.0
        out.append(nb)
    return out


def tabu_search(loss_fn, w0: np.ndarray, n_iters: int, rng: np.random.Generator,
                neighbor_subset: int = 10, tabu_list_len: int = 8):
    """Best-neighbor local search with a bounded FIFO memory of visited designs.

    ``loss_fn`` maps a stack of candidate designs (M, N) to a loss per row.
    Returns ``(w_best, loss_best, moves)`` where ``moves`` records the
    accepted (fingerprint, loss) per iteration.
    """
    w = np.asarray(w0, dtype=np.float64).copy()
    tabu: deque = deque(maxlen=tabu_list_len)
    tabu.append(_fingerprint(w))
    best_w, best_loss = w.copy(), float(loss_fn(w[None, :])[0])
    moves = []
    for _ in range(n_iters):
        nbrs = tabu_neighbors(w, neighbor_subset, rng, tabu)
        losses = np.asarray(loss_fn(np.stack(nbrs)), dtype=np.float64)
        pick = int(np.argmin(losses))  # argmin takes the lowest index on ties
        w = nbrs[pick]
        tabu.append(_fingerprint(w))
        moves.append((_fingerprint(w), float(losses[pick])))
        if losses[pick] < best_loss:
            best_loss = float(losses[pick])
            best_w = w.copy()
    return best_w, best_loss, moves


def _resolve_model(model) -> OdeModel:
    return make_model(model) if isinstance(model, str) else model


def _check_finite(value: float):
    if not math.isfinite(value):
        raise DivergedError("training loss became non-finite")


class _DesignerBase(BaseEstimator):
    """Shared training machinery for the two design methods."""

    def _setup(self):
        model = _resolve_model(self.model)
        ss = np.random.SeedSequence(self.random_state)
        rng = rng_from(ss)
        net = LFENet(model.n_points, model.param_dim, self.hidden, self.n_layers)
        probe = generate_batch(model, min(64, self.batch_size), rng)
        data_scale = max(float(torch.sqrt((probe.d_clean**2).mean())), 1e-12)
        net.initialize(rng, data_scale=data_scale,
                       output_bias=np.asarray(model.prior.mean))
        opt = torch.optim.Adam(net.parameters(), lr=self.lr_theta,
                               betas=(0.9, 0.999), eps=1e-8)
        return model, rng, net, opt

    def _theta_step(self, model, net, opt, w_t, batch, phase: str):
        l_t, l_q, l_d = batch_risk(model, net, w_t, batch, self.gamma)
        _check_finite(float(l_t.detach()))
        opt.zero_grad()
        l_t.backward()
        opt.step()
        self.history_.append({
            "iter": len(self.history_), "l_q": float(l_q.detach()),
            "l_d": float(l_d.detach()) if l_d is not None else 0.0,
            "l_T": float(l_t.detach()), "sparsity": sparsity(w_t),
            "phase": phase,
        })
        return l_t

    def predict(self, d, sigma) -> np.ndarray:
        """Estimate parameters from (noisy) data under the fitted design."""
        return self.net_.predict(d, self.w_, sigma)


class ContinuousDesignEstimator(_DesignerBase):
    """Joint training of the estimator network and a continuous sparse design.

    Phase 1 shrinks the design vector until the sparsity target is met;
    phase 2 freezes the hard-thresholded design and trains the network alone.
    If shrinkage stalls (the risk gradient keeps reviving weights), the
    design is hardened to the largest weights so fitting always terminates
    at the requested sparsity.
    """

    # phase-1 iterations without a sparsity decrease before hardening
    _STALL_WINDOW = 300

    def __init__(self, model="ppm", sparsity_target=4, gamma=1.0,
                 batch_size=3500, hidden=32, n_layers=3, lr_theta=1e-3,
                 lr_w=1e-3, shrink_rho=1e-3, phase1_cap=200_000,
                 phase2_iters=5000, random_state=0):
        self.model = model
        self.sparsity_target = sparsity_target
        self.gamma = gamma
        self.batch_size = batch_size
        self.hidden = hidden
        self.n_layers = n_layers
        self.lr_theta = lr_theta
        self.lr_w = lr_w
        self.shrink_rho = shrink_rho
        self.phase1_cap = phase1_cap
        self.phase2_iters = phase2_iters
        self.random_state = random_state

    def _shrink_step(self, w: torch.Tensor, dw: torch.Tensor) -> torch.Tensor:
        """One proximal update that never overshoots below the target.

        Uniform shrinkage can push many similar weights across zero in one
        step; if that happens the shrink amount is halved until the target
        sparsity survives, falling back to keeping the largest weights.
        """
        rho = self.shrink_rho
        while True:
            w_new = update_w_continuous(w, dw, self.lr_w, rho)
            if sparsity(w_new) >= self.sparsity_target or rho < 1e-12:
                break
            rho *= 0.5
        if sparsity(w_new) < self.sparsity_target:
            moved = w - self.lr_w * dw
            keep = torch.topk(moved, self.sparsity_target).indices
            w_new = torch.zeros_like(w)
            w_new[keep] = torch.clamp(moved[keep], min=2 * SPARSITY_THRESHOLD)
        return w_new

    def fit(self, X=None, y=None):
        model, rng, net, opt = self._setup()
        if self.sparsity_target > model.n_points:
            raise ValueError("sparsity_target exceeds the number of grid points")
        self.history_ = []
        w = torch.ones(model.n_points, dtype=DTYPE, requires_grad=True)

        it = 0
        stalled = 0
        last_sparsity = sparsity(w)
        while sparsity(w) > self.sparsity_target:
            if it >= self.phase1_cap or stalled >= self._STALL_WINDOW:
                # The risk gradient outweighs the shrink pressure (large
                # gamma rewards dense designs), so uniform shrinkage will
                # not reach the target; harden to the largest weights and
                # let phase 2 adapt the network to them.
                with torch.no_grad():
                    keep = torch.topk(w, self.sparsity_target).indices
                    mask = torch.zeros_like(w)
                    mask[keep] = 1.0
                    w.mul_(mask)
                break
            batch = generate_batch(model, self.batch_size, rng)
            if w.grad is not None:
                w.grad = None
            self._theta_step(model, net, opt, w, batch, phase="1")
            with torch.no_grad():
                w.copy_(self._shrink_step(w, w.grad))
            now = sparsity(w)
            stalled = 0 if now < last_sparsity else stalled + 1
            last_sparsity = now
            it += 1

        with torch.no_grad():
            w[w <= SPARSITY_THRESHOLD] = 0.0
        w_fixed = w.detach().clone()
        for _ in range(self.phase2_iters):
            batch = generate_batch(model, self.batch_size, rng)
            self._theta_step(model, net, opt, w_fixed, batch, phase="2")

        self.model_ = model
        self.net_ = net
        self.w_ = w_fixed.numpy().copy()
        self.n_iter_ = len(self.history_)
        return self


class TabuDesignEstimator(_DesignerBase):
    """Block coordinate descent: gradient steps on the network, tabu moves on
    a binary design at fixed sparsity."""

    def __init__(self, model="ppm", sparsity_target=4, gamma=1.0,
                 batch_size=3500, hidden=32, n_layers=3, lr_theta=1e-3,
                 outer_iter=10, inner_iter=500, neighbor_subset=10,
                 tabu_list_len=8, tabu_total_iters=200, random_state=0):
        self.model = model
        self.sparsity_target = sparsity_target
        self.gamma = gamma
        self.batch_size = batch_size
        self.hidden = hidden
        self.n_layers = n_layers
        self.lr_theta = lr_theta
        self.outer_iter = outer_iter
        self.inner_iter = inner_iter
        self.neighbor_subset = neighbor_subset
        self.tabu_list_len = tabu_list_len
        self.tabu_total_iters = tabu_total_iters
        self.random_state = random_state

    def _candidate_losses(self, model, net, batch, W: np.ndarray) -> np.ndarray:
        losses = np.empty(W.shape[0])
        with torch.no_grad():
            for m in range(W.shape[0]):
                w_t = torch.as_tensor(W[m], dtype=DTYPE)
                l_t, _, _ = batch_risk(model, net, w_t, batch, self.gamma)
                losses[m] = float(l_t)
        return losses

    def fit(self, X=None, y=None, w_init: np.ndarray | None = None):
        model, rng, net, opt = self._setup()
        if w_init is None:
            w = np.zeros(model.n_points)
            w[rng.choice(model.n_points, size=self.sparsity_target,
                         replace=False)] = 1.0
        else:
            w = DesignWeights(np.asarray(w_init, dtype=np.float64),
                              mode="binary").values.copy()
        self.history_ = []
        best_w, best_loss, best_state = w.copy(), math.inf, None
        tabu_per_outer = max(1, math.ceil(self.tabu_total_iters
                                          / max(1, self.outer_iter)))
        for _ in range(self.outer_iter):
            w_t = torch.as_tensor(w, dtype=DTYPE)
            for _ in range(self.inner_iter):
                batch = generate_batch(model, self.batch_size, rng)
                self._theta_step(model, net, opt, w_t, batch, phase="theta")

            # One fresh batch per tabu step, shared by all candidates so the
            # comparison uses common random numbers.
            batch = generate_batch(model, self.batch_size, rng)

            def loss_fn(W, _batch=batch):
                return self._candidate_losses(model, net, _batch, W)

            w, loss, moves = tabu_search(
                loss_fn, w, tabu_per_outer, rng,
                neighbor_subset=self.neighbor_subset,
                tabu_list_len=self.tabu_list_len,
            )
            for fp, mv_loss in moves:
                self.history_.append({
                    "iter": len(self.history_), "l_q": float("nan"),
                    "l_d": float("nan"), "l_T": mv_loss,
                    "sparsity": len(fp), "phase": "tabu",
                })
            if loss < best_loss:
                best_loss = loss
                best_w = w.copy()
                best_state = {k: v.detach().clone()
                              for k, v in net.state_dict().items()}
        if best_state is not None:
            net.load_state_dict(best_state)
        self.model_ = model
        self.net_ = net
        self.w_ = best_w
        self.best_loss_ = best_loss
        self.n_iter_ = len(self.history_)
        return self


def fit_network(model, w, n_iters: int, rng, net: LFENet | None = None,
                batch_size: int = 256, gamma: float = 1.0,
                lr_theta: float = 1e-3, hidden: int = 32, n_layers: int = 3,
                ) -> tuple[LFENet, list]:
    """Train (or continue training) the estimator network at a fixed design."""
    w_t = torch.as_tensor(np.asarray(w, dtype=np.float64), dtype=DTYPE)
    if net is None:
        net = LFENet(model.n_points, model.param_dim, hidden, n_layers)
        probe = generate_batch(model, min(64, batch_size), rng)
        data_scale = max(float(torch.sqrt((probe.d_clean**2).mean())), 1e-12)
        net.initialize(rng, data_scale=data_scale,
                       output_bias=np.asarray(model.prior.mean))
    opt = torch.optim.Adam(net.parameters(), lr=lr_theta,
                           betas=(0.9, 0.999), eps=1e-8)
    history = []
    for it in range(n_iters):
        batch = generate_batch(model, batch_size, rng)
        l_t, l_q, l_d = batch_risk(model, net, w_t, batch, gamma)
        _check_finite(float(l_t.detach()))
        opt.zero_grad()
        l_t.backward()
        opt.step()
        history.append({
            "iter": it, "l_q": float(l_q.detach()),
            "l_d": float(l_d.detach()) if l_d is not None else 0.0,
            "l_T": float(l_t.detach()), "sparsity": sparsity(w_t),
            "phase": "theta",
        })
    return net, history


def history_to_csv(history, path: str | Path) -> None:
    """Stream a training history to CSV (iter, l_q, l_d, l_T, sparsity, phase)."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["iter", "l_q", "l_d", "l_T", "sparsity", "phase"])
        writer.writeheader()
        writer.writerows(history)
