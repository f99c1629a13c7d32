"""Normalized-MSE risk metrics and the multi-set evaluation protocol."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .exceptions import DomainError, ShapeError
from .grids import TimeGrid
from .stochastic import generate_batch, rng_from

__all__ = [
    "nmse_params",
    "trapz_variable",
    "nmse_data",
    "total_risk",
    "batch_risk",
    "sem_of_means",
    "RiskReport",
    "evaluate",
]

DTYPE = torch.float64


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)


def nmse_params(q_hat, q) -> torch.Tensor:
    """Squared parameter error normalized by the squared true norm.

    Per-sample normalization; rows are averaged when batches are given.
    """
    q_hat, q = _as_tensor(q_hat), _as_tensor(q)
    if q_hat.shape != q.shape:
        raise ShapeError(f"shape mismatch: {tuple(q_hat.shape)} vs {tuple(q.shape)}")
    denom = (q**2).sum(dim=-1)
    if bool((denom == 0).any()):
        raise DomainError("true parameter vector has zero norm")
    return (((q_hat - q) ** 2).sum(dim=-1) / denom).mean()


def trapz_variable(f, grid: TimeGrid) -> torch.Tensor:
    """Trapezoid rule on a (possibly non-uniform) grid, along the last axis."""
    f = _as_tensor(f)
    if f.shape[-1] != len(grid):
        raise ShapeError(f"expected {len(grid)} values, got {f.shape[-1]}")
    c = torch.as_tensor(grid.trapezoid_weights(), dtype=f.dtype)
    return (f * c).sum(dim=-1)


def nmse_data(d_hat, d, grid: TimeGrid) -> torch.Tensor:
    """Time-integrated squared data misfit normalized by the data energy."""
    d_hat, d = _as_tensor(d_hat), _as_tensor(d)
    if d_hat.shape != d.shape:
        raise ShapeError(f"shape mismatch: {tuple(d_hat.shape)} vs {tuple(d.shape)}")
    denom = trapz_variable(d**2, grid)
    if bool((denom == 0).any()):
        raise DomainError("data vector has zero energy")
    return (trapz_variable((d_hat - d) ** 2, grid) / denom).mean()


def total_risk(l_q, l_d, gamma: float = 1.0):
    return l_q + gamma * l_d


def batch_risk(model, net, w: torch.Tensor, batch, gamma: float = 1.0):
    """Differentiable (l_T, l_q, l_d) of an estimator on one training batch.

    The data risk compares the re-simulated curve F(q_hat) with the noisy
    data over the full grid, so gradients flow through the ODE solve.  The
    estimate is clamped to a generous prior box before the solve, because a
    poorly trained network can emit parameters whose trajectory overflows;
    inside the box the clamp is the identity and gradients are untouched.
    """
    q_hat = net(batch.d_noisy, w, batch.sigma)
    l_q = nmse_params(q_hat, batch.q)
    if gamma == 0.0:
        l_d = None
    else:
        lo, hi = model.prior.support_box()
        q_safe = torch.clamp(
            q_hat,
            torch.as_tensor(lo, dtype=q_hat.dtype),
            torch.as_tensor(hi, dtype=q_hat.dtype),
        )
        l_d = nmse_data(model.solve(q_safe), batch.d_noisy, model.grid)
    l_t = l_q if l_d is None else total_risk(l_q, l_d, gamma)
    return l_t, l_q, l_d


def sem_of_means(per_set_means) -> float:
    """Standard error of the mean: std of per-set means over sqrt(#sets)."""
    vals = np.asarray(per_set_means, dtype=np.float64)
    if vals.size < 2:
        return 0.0
    return float(np.std(vals, ddof=1) / np.sqrt(vals.size))


@dataclass
class RiskReport:
    """Risk summary over repeated evaluation sets."""

    l_q: float
    l_d: float
    l_t: float
    sem_l_q: float
    sem_l_t: float
    n_sets: int
    set_size: int
    gamma: float
    model: str = ""
    method: str = ""
    sparsity: int = -1
    seed: int | None = None

    CSV_COLUMNS = [
        "model", "method", "sparsity", "gamma", "l_q", "sem_l_q",
        "l_d", "l_T", "sem_l_T", "n_sets", "set_size", "seed",
    ]

    @property
    def total_samples(self) -> int:
        return self.n_sets * self.set_size

    def csv_row(self) -> list:
        return [
            self.model, self.method, self.sparsity, repr(self.gamma),
            repr(self.l_q), repr(self.sem_l_q), repr(self.l_d),
            repr(self.l_t), repr(self.sem_l_t),
            self.n_sets, self.set_size, self.seed,
        ]

    @staticmethod
    def write_csv(reports, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RiskReport.CSV_COLUMNS)
            for rep in reports:
                writer.writerow(rep.csv_row())

    @staticmethod
    def from_set_means(lq_means, ld_means, gamma: float, set_size: int,
                       **meta) -> "RiskReport":
        lq = np.asarray(lq_means, dtype=np.float64)
        ld = np.asarray(ld_means, dtype=np.float64)
        lt = lq + gamma * ld
        return RiskReport(
            l_q=float(lq.mean()), l_d=float(ld.mean()), l_t=float(lt.mean()),
            sem_l_q=sem_of_means(lq), sem_l_t=sem_of_means(lt),
            n_sets=lq.size, set_size=set_size, gamma=gamma, **meta,
        )


def evaluate(model, predictor, w, n_sets: int = 50, set_size: int = 3500,
             gamma: float = 1.0, seed=0, **meta) -> RiskReport:
    """Risk of an estimator under a fixed design over fresh evaluation sets.

    ``predictor`` maps (d_noisy, w, sigma) tensors to parameter estimates;
    a trained network qualifies directly.  Each set draws an independent
    batch from a seed spawned per set index, so results do not depend on
    evaluation order or parallelism.
    """
    w_t = _as_tensor(w)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(n_sets)
    lo, hi = model.prior.support_box()
    lo_t, hi_t = _as_tensor(lo), _as_tensor(hi)
    lq_means, ld_means = [], []
    for child in children:
        batch = generate_batch(model, set_size, rng_from(child))
        with torch.no_grad():
            q_hat = _as_tensor(predictor(batch.d_noisy, w_t, batch.sigma))
            lq_means.append(float(nmse_params(q_hat, batch.q)))
            q_safe = torch.clamp(q_hat, lo_t, hi_t)
            ld_means.append(
                float(nmse_data(model.solve(q_safe), batch.d_noisy, model.grid))
            )
    seed_val = meta.pop("seed", None)
    if seed_val is None and not isinstance(seed, np.random.SeedSequence):
        seed_val = int(seed)
    return RiskReport.from_set_means(
        lq_means, ld_means, gamma=gamma, set_size=set_size,
        model=getattr(model, "name", ""), seed=seed_val, **meta,
    )
