"""Conventional design baselines: A-optimality, quasi-Newton MAP, greedy search."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .designers import DesignWeights
from .exceptions import DivergedError, SingularError
from .risk import nmse_params
from .stochastic import LognormalPrior, generate_batch

__all__ = [
    "PassCounter",
    "aopt_loss",
    "aopt_best",
    "quasi_newton_estimate",
    "greedy_search",
]

DTYPE = torch.float64


@dataclass
class PassCounter:
    """Cumulative forward/backward pass accounting for the inner estimator.

    Counts are the nominal maxima per estimate (outer x inner iterations),
    matching how solver cost is usually budgeted; wall-clock per combined
    forward+backward pair is sampled alongside but never asserted.
    """

    forward_passes: int = 0
    backward_passes: int = 0
    pass_seconds: list = field(default_factory=list)

    def record(self, forward: int, backward: int, seconds: float | None = None):
        self.forward_passes += forward
        self.backward_passes += backward
        if seconds is not None and forward > 0:
            self.pass_seconds.append(seconds / forward)

    def seconds_per_pass(self) -> tuple[float, float]:
        if not self.pass_seconds:
            return 0.0, 0.0
        arr = np.asarray(self.pass_seconds)
        return float(arr.mean()), float(arr.std())


def aopt_loss(A: np.ndarray, w: np.ndarray, sigma: float) -> float:
    """Expected-variance lower bound sigma^2 * trace((A^T W^2 A)^-1)."""
    A = np.asarray(A, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    M = A.T @ (w[:, None] ** 2 * A)
    eigvals = np.linalg.eigvalsh(M)
    if eigvals[0] <= 1e-12 * max(1.0, eigvals[-1]):
        raise SingularError("weighted normal matrix is rank-deficient")
    return float(sigma**2 * np.trace(np.linalg.inv(M)))


def aopt_best(A: np.ndarray, sparsity: int, sigma: float,
              chunk: int = 500_000) -> tuple[np.ndarray, float]:
    """Exhaustive minimizer of the A-optimality loss over binary designs.

    Vectorized over all C(N, sparsity) supports; feasible up to sparsity 4
    on a 100-point grid.  Requires a two-column design matrix.
    """
    A = np.asarray(A, dtype=np.float64)
    n, m = A.shape
    if m != 2:
        raise ValueError("exhaustive search supports two-column design matrices")
    if not 2 <= sparsity <= n:
        raise ValueError("sparsity must be between 2 and the grid size")
    total = math.comb(n, sparsity)
    a2 = A[:, 0] ** 2
    ab = A[:, 0] * A[:, 1]
    b2 = A[:, 1] ** 2
    combo_iter = itertools.combinations(range(n), sparsity)
    best_loss, best_rows = math.inf, None
    done = 0
    while done < total:
        size = min(chunk, total - done)
        flat = np.fromiter(
            itertools.chain.from_iterable(itertools.islice(combo_iter, size)),
            dtype=np.int32, count=size * sparsity,
        )
        rows = flat.reshape(size, sparsity)
        m11 = a2[rows].sum(axis=1)
        m12 = ab[rows].sum(axis=1)
        m22 = b2[rows].sum(axis=1)
        det = m11 * m22 - m12**2
        with np.errstate(divide="ignore", invalid="ignore"):
            trace_inv = np.where(det > 1e-12, (m11 + m22) / det, np.inf)
        k = int(np.argmin(trace_inv))
        if trace_inv[k] < best_loss:
            best_loss = float(trace_inv[k])
            best_rows = rows[k].copy()
        done += size
    if best_rows is None or not math.isfinite(best_loss):
        raise SingularError("no full-rank support found")
    w = np.zeros(n)
    w[best_rows] = 1.0
    return w, float(sigma**2 * best_loss)


def _misfit(model, q: torch.Tensor, w: torch.Tensor, d: torch.Tensor,
            sigma: torch.Tensor) -> torch.Tensor:
    d_pred = model.solve(q)
    if model.noise.kind == "additive_on_log":
        resid = w * (torch.log(d_pred) - torch.log(d))
    else:
        resid = w * (d_pred - d)
    return 0.5 * (resid**2).sum(dim=-1) / sigma**2


def quasi_newton_estimate(model, w, d_noisy, sigma=1.0, rho_reg: float = 0.0,
                          outer_iter: int = 4, inner_iter: int = 20,
                          tol: float = 1e-6, counter: PassCounter | None = None,
                          ) -> np.ndarray:
    """MAP-style estimate by limited-memory quasi-Newton descent.

    Minimizes the weighted data misfit plus ``rho_reg`` times the negative
    log prior, starting from the prior mean.  Lognormal-prior models are
    optimized in log-parameter space to preserve positivity.
    """
    w_t = torch.as_tensor(np.asarray(w, dtype=np.float64), dtype=DTYPE)
    d_t = torch.as_tensor(np.asarray(d_noisy, dtype=np.float64), dtype=DTYPE)
    if d_t.ndim == 1:
        d_t = d_t.unsqueeze(0)
    batch = d_t.shape[0]
    sig = torch.as_tensor(np.asarray(sigma, dtype=np.float64), dtype=DTYPE)
    sig = torch.clamp(sig, min=1e-6)
    log_space = isinstance(model.prior, LognormalPrior)
    q0 = np.broadcast_to(model.prior.mean, (batch, model.param_dim))
    u = torch.as_tensor(np.log(q0) if log_space else q0.copy(), dtype=DTYPE
                        ).clone().requires_grad_(True)

    opt = torch.optim.LBFGS([u], max_iter=inner_iter, history_size=10,
                            line_search_fn="strong_wolfe")

    def objective():
        q = torch.exp(u) if log_space else u
        loss = _misfit(model, q, w_t, d_t, sig)
        if rho_reg > 0:
            loss = loss + rho_reg * model.prior.neg_log_density(q)
        return loss.sum()

    def closure():
        opt.zero_grad()
        loss = objective()
        loss.backward()
        return loss

    start = time.perf_counter()
    prev = math.inf
    for _ in range(outer_iter):
        loss = float(opt.step(closure).detach())
        if not math.isfinite(loss):
            raise DivergedError("quasi-Newton estimate diverged")
        if abs(prev - loss) < tol:
            break
        prev = loss
    elapsed = time.perf_counter() - start
    if counter is not None:
        counter.record(outer_iter * inner_iter, outer_iter * inner_iter, elapsed)
    with torch.no_grad():
        q_hat = torch.exp(u) if log_space else u.clone()
    return q_hat.detach().numpy()


_DEFAULT_RHO = {"3tc": 0.1, "ppm": 1.0}


def _default_estimator(model, w, batch, counter):
    rho = _DEFAULT_RHO.get(model.name, 0.0)
    return quasi_newton_estimate(model, w, batch.d_noisy.numpy(),
                                 sigma=batch.sigma.numpy(), rho_reg=rho,
                                 counter=counter)


def greedy_search(model, sparsity: int, rng, batch_size: int = 3500,
                  estimator=None, counter: PassCounter | None = None,
                  refine_iters: int = 0, refine_lr: float = 1e-2,
                  ) -> tuple[DesignWeights, PassCounter, np.ndarray | None]:
    """Forward greedy selection of measurement times.

    At each step every unchosen time point is tried with a freshly sampled
    batch of true parameters (shared across candidates), scored by the
    parameter-recovery nMSE of the inner estimator, and the best point is
    permanently activated.  Optionally refines the binary result into
    continuous weights by ``refine_iters`` adaptive-moment steps (cost not
    included in the pass counts).
    """
    counter = counter if counter is not None else PassCounter()
    estimator = estimator if estimator is not None else _default_estimator
    n = model.n_points
    if sparsity > n:
        raise ValueError("sparsity exceeds the number of grid points")
    w = np.zeros(n)
    for _ in range(sparsity):
        batch = generate_batch(model, batch_size, rng)
        best_loss, best_j = math.inf, None
        for j in range(n):
            if w[j] == 1.0:
                continue
            w[j] = 1.0
            q_hat = estimator(model, w, batch, counter)
            loss = float(nmse_params(torch.as_tensor(q_hat, dtype=DTYPE),
                                     batch.q))
            if loss < best_loss:  # strict: earliest index wins ties
                best_loss, best_j = loss, j
            w[j] = 0.0
        w[best_j] = 1.0
    design = DesignWeights(w.copy(), mode="binary")
    w_cont = None
    if refine_iters > 0:
        w_cont = _refine_continuous(model, w, refine_iters, refine_lr,
                                    batch_size, rng)
    return design, counter, w_cont


def _refine_continuous(model, w_binary, iters, lr, batch_size, rng,
                       inner_steps: int = 10, inner_lr: float = 0.1,
                       ) -> np.ndarray:
    """Continuous polish of a binary greedy design.

    The inner estimate is an unrolled diagonal-scaled gradient descent on
    the misfit, so the recovery loss stays differentiable in the weights.
    """
    log_space = isinstance(model.prior, LognormalPrior)
    w = torch.as_tensor(w_binary, dtype=DTYPE).clone().requires_grad_(True)
    opt = torch.optim.Adam([w], lr=lr)
    for _ in range(iters):
        batch = generate_batch(model, batch_size, rng)
        q0 = np.broadcast_to(model.prior.mean, (len(batch), model.param_dim))
        u = torch.as_tensor(np.log(q0) if log_space else q0.copy(), dtype=DTYPE)
        sig = torch.clamp(batch.sigma, min=1e-6).unsqueeze(-1)
        for _ in range(inner_steps):
            u = u.detach().requires_grad_(True) if not u.requires_grad else u
            q = torch.exp(u) if log_space else u
            loss = _misfit(model, q, w, batch.d_noisy, sig.squeeze(-1)).sum()
            (grad,) = torch.autograd.grad(loss, u, create_graph=True)
            u = u - inner_lr * grad / (grad.abs().amax(dim=0, keepdim=True) + 1e-8)
        q_hat = torch.exp(u) if log_space else u
        outer_loss = nmse_params(q_hat, batch.q)
        opt.zero_grad()
        outer_loss.backward()
        opt.step()
        with torch.no_grad():
            w.clamp_(min=0.0)
    return w.detach().numpy()
