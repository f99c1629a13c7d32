"""Forward problems: compartmental tracer kinetics, predator-prey, exponential decay.

All models share one fixed-step RK4 integrator written on torch tensors, so
every forward solve is differentiable end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import torch

from .exceptions import NonFiniteError, ShapeError
from .grids import TimeGrid, linear_grid, log_grid
from .stochastic import LognormalPrior, NoiseSpec, UniformPrior

__all__ = [
    "FengInputParams",
    "feng_input",
    "rhs_3tc",
    "rhs_ppm",
    "rhs_exp",
    "OdeModel",
    "make_model",
    "MODEL_NAMES",
    "solve_forward",
    "exp_design_matrix",
]

DTYPE = torch.float64


@dataclass(frozen=True)
class FengInputParams:
    """Constants of the tri-exponential blood input function.

    The fitted decay constants are reported as negative numbers; the input
    function itself decays, so only their magnitudes enter the exponents
    (otherwise the curve would diverge).
    """

    a1: float = 408.87
    a2: float = 14.78
    a3: float = 14.78
    lam1: float = -8.46
    lam2: float = -0.1362
    lam3: float = -0.1362

    def scaled(self, c: float) -> "FengInputParams":
        """Scale the source amplitude by ``c`` (decay constants unchanged)."""
        return FengInputParams(
            self.a1 * c, self.a2 * c, self.a3 * c, self.lam1, self.lam2, self.lam3
        )


def feng_input(t, params: FengInputParams = FengInputParams()):
    """Blood input concentration at time ``t`` (minutes).

    ``(A1*t - A2 - A3) e^{-|l1| t} + A2 e^{-|l2| t} + A3 e^{-|l3| t}``;
    zero at t=0 by construction and decaying to zero for large t.
    """
    t = torch.as_tensor(t, dtype=DTYPE)
    l1, l2, l3 = abs(params.lam1), abs(params.lam2), abs(params.lam3)
    return (
        (params.a1 * t - params.a2 - params.a3) * torch.exp(-l1 * t)
        + params.a2 * torch.exp(-l2 * t)
        + params.a3 * torch.exp(-l3 * t)
    )


def rhs_3tc(t, state, q, feng: FengInputParams = FengInputParams()):
    """Three-compartment kinetics driven by the blood input.

    ``state[..., :]`` is (interstitial, bound, internalized); ``q[..., :]``
    holds the six rate constants k1..k6.
    """
    p_int, p_b, p_intern = state[..., 0], state[..., 1], state[..., 2]
    k1, k2, k3, k4, k5, k6 = (q[..., i] for i in range(6))
    p_v = feng_input(t, feng)
    d_int = p_v * k1 - (k2 + k3) * p_int + p_b * k4
    d_b = p_int * k3 - (k4 + k5) * p_b
    d_intern = p_b * k5 - k6 * p_intern
    return torch.stack([d_int, d_b, d_intern], dim=-1)


def rhs_ppm(t, state, q):
    """Predator-prey dynamics; ``q`` is (alpha, beta, gamma, delta)."""
    x, y = state[..., 0], state[..., 1]
    alpha, beta, gamma, delta = (q[..., i] for i in range(4))
    return torch.stack([alpha * x - beta * x * y, delta * x * y - gamma * y], dim=-1)


def rhs_exp(t, state, q):
    """Scalar exponential decay; ``q`` is (log y0, lambda)."""
    return q[..., 1:2] * state


@dataclass(frozen=True)
class OdeModel:
    """A forward problem: dynamics, observable, canonical grid, prior, noise."""

    name: str
    state_dim: int
    param_dim: int
    rhs: Callable
    observable: Callable
    initial_state: Callable  # q (B, p) -> state (B, state_dim)
    grid: TimeGrid
    prior: object
    noise: NoiseSpec
    substeps: int = 20
    rate_bound: Callable | None = None  # q -> scalar bound on |eigenvalues|

    @property
    def n_points(self) -> int:
        return len(self.grid)

    def with_grid(self, grid: TimeGrid, substeps: int | None = None) -> "OdeModel":
        return replace(self, grid=grid, substeps=substeps or self.substeps)

    def _interval_substeps(self, q: torch.Tensor) -> list[int]:
        """Per-interval internal step counts.

        Default: a fixed count per interval.  When a rate bound is known
        (stiff linear kinetics), the internal step is additionally capped at
        2 / bound for RK4 stability, at 0.05 time units near the origin and
        at 1/20 of the interval elsewhere.
        """
        dts = self.grid.intervals
        if self.rate_bound is None:
            return [self.substeps] * len(dts)
        with torch.no_grad():
            bound = float(self.rate_bound(q))
        h_stab = 2.0 / bound if bound > 0 else math.inf
        t0s = self.grid.points[:-1]
        counts = []
        for t0, dt in zip(t0s, dts):
            h_max = min(0.05 if t0 < 1.0 else dt / 20.0, h_stab)
            counts.append(max(1, int(math.ceil(dt / h_max))))
        return counts

    def solve(self, q: torch.Tensor) -> torch.Tensor:
        """Integrate from the initial state across the grid, apply the observable.

        ``q`` has shape (B, p) or (p,); output is (B, N) or (N,).
        """
        single = q.ndim == 1
        if single:
            q = q.unsqueeze(0)
        if q.shape[-1] != self.param_dim:
            raise ShapeError(
                f"expected {self.param_dim} parameters, got {q.shape[-1]}"
            )
        states = _rk4_path(
            self.rhs, self.initial_state(q), q, self.grid.points,
            self._interval_substeps(q),
        )
        data = self.observable(states)
        if not torch.isfinite(data).all():
            raise NonFiniteError(f"forward solve for model {self.name!r} diverged")
        return data.squeeze(0) if single else data

    def solve_numpy(self, q: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return self.solve(torch.as_tensor(q, dtype=DTYPE)).numpy()


def _rk4_path(rhs, y0, q, times, substep_counts) -> torch.Tensor:
    """Classical RK4 over ``times`` with fixed substeps per interval.

    Returns the state at every grid point, shape (B, N, state_dim).
    """
    y = y0
    out = [y]
    for j in range(len(times) - 1):
        t = float(times[j])
        h = (float(times[j + 1]) - t) / substep_counts[j]
        for _ in range(substep_counts[j]):
            k1 = rhs(t, y, q)
            k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1, q)
            k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2, q)
            k4 = rhs(t + h, y + h * k3, q)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        out.append(y)
    return torch.stack(out, dim=1)


def solve_forward(model: OdeModel, q, grid: TimeGrid | None = None):
    """Functional wrapper around :meth:`OdeModel.solve`."""
    if grid is not None:
        model = model.with_grid(grid)
    if isinstance(q, torch.Tensor):
        return model.solve(q)
    return model.solve_numpy(np.asarray(q, dtype=np.float64))


def exp_design_matrix(grid: TimeGrid) -> np.ndarray:
    """N x 2 matrix (ones | times) of the log-linearized decay model."""
    t = grid.points
    return np.column_stack([np.ones_like(t), t])


def _tac_observable(states):
    return states.sum(dim=-1)


def _prey_observable(states):
    return states[..., 0]


def _scalar_observable(states):
    return states[..., 0]


def _zeros_initial(state_dim):
    def init(q):
        return torch.zeros(q.shape[0], state_dim, dtype=q.dtype)

    return init


def _constant_initial(values):
    vals = torch.as_tensor(values, dtype=DTYPE)

    def init(q):
        return vals.to(q.dtype).expand(q.shape[0], -1).clone()

    return init


def _exp_initial(q):
    return torch.exp(q[..., 0:1])


def _3tc_rate_bound(q: torch.Tensor) -> float:
    """Gershgorin-style bound on the spectral radius of the kinetics matrix."""
    k = [q[..., i] for i in range(6)]
    rows = torch.stack(
        [k[1] + k[2] + k[3], k[2] + k[3] + k[4], k[4] + k[5]], dim=-1
    )
    return float(rows.max())


_TC_PRIOR_MEANS = np.array([1.5e-2, 1.6e-3, 121.0, 4e-2, 1e-3, 2e-4])
_PPM_PRIOR_MEANS = np.array([0.4, 0.018, 0.8, 0.023])


def _build_3tc(grid=None, substeps=20, feng: FengInputParams | None = None):
    feng = feng or FengInputParams()
    return OdeModel(
        name="3tc",
        state_dim=3,
        param_dim=6,
        rhs=lambda t, y, q: rhs_3tc(t, y, q, feng),
        observable=_tac_observable,
        initial_state=_zeros_initial(3),
        grid=grid or log_grid(400, 1e4),
        prior=LognormalPrior(_TC_PRIOR_MEANS, 0.2 * _TC_PRIOR_MEANS),
        noise=NoiseSpec("multiplicative_relative", tuple(np.arange(20) / 100.0)),
        substeps=substeps,
        rate_bound=_3tc_rate_bound,
    )


def _build_ppm(grid=None, substeps=20):
    return OdeModel(
        name="ppm",
        state_dim=2,
        param_dim=4,
        rhs=rhs_ppm,
        observable=_prey_observable,
        initial_state=_constant_initial([30.0, 4.0]),
        grid=grid or linear_grid(200, 30.0),
        prior=LognormalPrior(_PPM_PRIOR_MEANS, 0.05 * _PPM_PRIOR_MEANS),
        noise=NoiseSpec("multiplicative_relative", tuple(np.arange(11) / 100.0)),
        substeps=substeps,
    )


def _build_exp(grid=None, substeps=20):
    return OdeModel(
        name="exp",
        state_dim=1,
        param_dim=2,
        rhs=rhs_exp,
        observable=_scalar_observable,
        initial_state=_exp_initial,
        grid=grid or linear_grid(100, 100.0),
        prior=UniformPrior(np.array([0.0, -0.5]), np.array([1.0, -0.01])),
        noise=NoiseSpec("additive_on_log", (0.1,)),
        substeps=substeps,
    )


_BUILDERS = {"3tc": _build_3tc, "ppm": _build_ppm, "exp": _build_exp}
MODEL_NAMES = tuple(_BUILDERS)


def make_model(name: str, grid: TimeGrid | None = None, **kwargs) -> OdeModel:
    """Look up a model by name; optionally override grid or solver settings."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; choose from {MODEL_NAMES}") from None
    return builder(grid=grid, **kwargs)
