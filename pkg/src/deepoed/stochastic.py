"""Prior sampling, noise injection and self-supervised batch generation."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .exceptions import DomainError, ShapeError

__all__ = [
    "LognormalPrior",
    "UniformPrior",
    "NoiseSpec",
    "TrainingBatch",
    "lognormal_params",
    "sample_prior",
    "add_noise",
    "generate_batch",
    "task_seed",
    "rng_from",
]

DTYPE = torch.float64


def lognormal_params(mean: np.ndarray, std: np.ndarray):
    """Convert mean/std of a lognormal variable to the parameters of its log.

    Returns ``(mu, sigma)`` such that ``exp(N(mu, sigma^2))`` has the given
    mean and standard deviation.
    """
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(mean <= 0):
        raise DomainError("lognormal mean must be positive")
    if np.any(std < 0):
        raise DomainError("lognormal std must be nonnegative")
    mu = np.log(mean**2 / np.sqrt(mean**2 + std**2))
    sigma = np.sqrt(np.log1p(std**2 / mean**2))
    return mu, sigma


@dataclass(frozen=True)
class LognormalPrior:
    """Independent lognormal prior given by mean/std of the variable itself."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if mean.shape != std.shape:
            raise ShapeError("mean and std must have the same shape")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        mu, sigma = lognormal_params(mean, std)
        object.__setattr__(self, "log_mean", mu)
        object.__setattr__(self, "log_std", sigma)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        return np.exp(self.log_mean + self.log_std * z)

    def neg_log_density(self, q: torch.Tensor) -> torch.Tensor:
        """Negative log prior density up to an additive constant, per sample."""
        mu = torch.as_tensor(self.log_mean, dtype=q.dtype)
        sig = torch.as_tensor(self.log_std, dtype=q.dtype)
        sig = torch.clamp(sig, min=1e-12)
        logq = torch.log(q)
        return ((logq - mu) ** 2 / (2 * sig**2) + logq).sum(dim=-1)

    def support_box(self, n_std: float = 8.0):
        """A box containing essentially all prior mass (log-scale +- n_std)."""
        lo = np.exp(self.log_mean - n_std * self.log_std)
        hi = np.exp(self.log_mean + n_std * self.log_std)
        return lo, hi


@dataclass(frozen=True)
class UniformPrior:
    """Independent uniform prior on a box."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=np.float64))
        high = np.atleast_1d(np.asarray(self.high, dtype=np.float64))
        if low.shape != high.shape:
            raise ShapeError("low and high must have the same shape")
        if np.any(high < low):
            raise ValueError("high must be >= low")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def dim(self) -> int:
        return self.low.size

    @property
    def mean(self) -> np.ndarray:
        return 0.5 * (self.low + self.high)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(n, self.dim))

    def neg_log_density(self, q: torch.Tensor) -> torch.Tensor:
        # Constant inside the box; the estimators only use it as a
        # regularizer, so the flat case contributes nothing.
        return torch.zeros(q.shape[:-1], dtype=q.dtype)

    def support_box(self, n_std: float = 8.0):
        """The prior box widened by one full range on each side."""
        span = self.high - self.low
        return self.low - span, self.high + span


@dataclass(frozen=True)
class NoiseSpec:
    """How synthetic data is corrupted.

    ``kind`` is either ``multiplicative_relative`` (d * (1 + sigma*eps)) or
    ``additive_on_log`` (log d + sigma*eps).  ``levels`` is the finite set of
    noise standard deviations one of which is drawn per sample.
    """

    kind: str
    levels: tuple

    def __post_init__(self):
        if self.kind not in ("multiplicative_relative", "additive_on_log"):
            raise ValueError(f"unknown noise kind: {self.kind}")
        levels = tuple(float(v) for v in self.levels)
        if any(v < 0 for v in levels):
            raise ValueError("noise levels must be nonnegative")
        object.__setattr__(self, "levels", levels)

    def draw_levels(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(np.asarray(self.levels), size=n)


def add_noise(
    d_clean: np.ndarray,
    sigma,
    spec: NoiseSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Corrupt clean data according to ``spec``.

    ``sigma`` may be a scalar or a per-sample vector matching the leading
    dimension of ``d_clean``.
    """
    d_clean = np.asarray(d_clean, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim == 1:
        sigma = sigma[:, None]
    eps = rng.standard_normal(d_clean.shape)
    if spec.kind == "multiplicative_relative":
        return d_clean * (1.0 + sigma * eps)
    if np.any(d_clean <= 0):
        raise DomainError("additive_on_log noise requires positive data")
    return np.exp(np.log(d_clean) + sigma * eps)


@dataclass
class TrainingBatch:
    """One self-supervised batch: parameters, clean and noisy data, noise levels."""

    q: torch.Tensor        # (B, p)
    d_clean: torch.Tensor  # (B, N)
    d_noisy: torch.Tensor  # (B, N)
    sigma: torch.Tensor    # (B,)

    def __len__(self) -> int:
        return self.q.shape[0]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            p = self.q.shape[1]
            n = self.d_noisy.shape[1]
            writer.writerow(
                ["sample_id", "sigma"]
                + [f"q_{i + 1}" for i in range(p)]
                + [f"d_{i + 1}" for i in range(n)]
            )
            for i in range(len(self)):
                writer.writerow(
                    [i, float(self.sigma[i])]
                    + [repr(float(v)) for v in self.q[i]]
                    + [repr(float(v)) for v in self.d_noisy[i]]
                )


def sample_prior(prior, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return prior.sample(batch_size, rng)


def generate_batch(model, batch_size: int, rng: np.random.Generator) -> TrainingBatch:
    """Sample parameters from the model prior, solve forward and add noise."""
    q = sample_prior(model.prior, batch_size, rng)
    d_clean = model.solve_numpy(q)
    sigma = model.noise.draw_levels(batch_size, rng)
    d_noisy = add_noise(d_clean, sigma, model.noise, rng)
    return TrainingBatch(
        q=torch.as_tensor(q, dtype=DTYPE),
        d_clean=torch.as_tensor(d_clean, dtype=DTYPE),
        d_noisy=torch.as_tensor(d_noisy, dtype=DTYPE),
        sigma=torch.as_tensor(sigma, dtype=DTYPE),
    )


def task_seed(master_seed: int, task_name: str) -> np.random.SeedSequence:
    """Derive a per-task seed sequence from a master seed and a task name.

    The task name is hashed with SHA-256 and its first 8 bytes are mixed
    into the entropy pool, so adding tasks never perturbs existing ones.
    """
    digest = hashlib.sha256(task_name.encode("utf-8")).digest()
    return np.random.SeedSequence([int(master_seed), int.from_bytes(digest[:8], "big")])


def rng_from(seed) -> np.random.Generator:
    """Build a Generator from an int seed, a SeedSequence, or pass one through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
