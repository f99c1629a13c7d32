"""Residual estimator network mapping (weighted data, design, noise level) to parameters."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .exceptions import ShapeError

__all__ = ["silu", "LFENet", "save_network", "load_network"]

DTYPE = torch.float64
_MAGIC = b"LFE1"


def silu(x):
    """x * sigmoid(x), element-wise."""
    x = torch.as_tensor(x, dtype=DTYPE) if not isinstance(x, torch.Tensor) else x
    return x * torch.sigmoid(x)


class LFENet(nn.Module):
    """Residual network with design-weight and noise-level embeddings.

    The data enters pre-multiplied by the design weights; the weights and the
    noise level are embedded and added into every residual block, so one
    network serves all candidate designs and noise levels.
    """

    def __init__(self, n_points: int, param_dim: int, hidden: int = 32,
                 n_layers: int = 3):
        super().__init__()
        self.n_points = n_points
        self.param_dim = param_dim
        self.hidden = hidden
        self.n_layers = n_layers
        mk = lambda i, o: nn.Linear(i, o, dtype=DTYPE)
        self.data_in = mk(n_points, hidden)                       # W_1
        self.noise_in = mk(1, hidden)                             # E
        self.w_embed = nn.ModuleList(
            [mk(n_points, hidden)] + [mk(hidden, hidden) for _ in range(n_layers)]
        )                                                         # Q_1..Q_{L+1}
        self.s_embed = nn.ModuleList(
            [mk(hidden, hidden) for _ in range(n_layers + 1)]
        )                                                         # P_1..P_{L+1}
        self.blocks = nn.ModuleList(
            [mk(hidden, hidden) for _ in range(n_layers)]
        )                                                         # W_2..W_{L+1}
        self.out = mk(hidden, param_dim)                          # W_f

    def initialize(self, rng: np.random.Generator, data_scale: float = 1.0,
                   output_bias: np.ndarray | None = None) -> "LFENet":
        """Seeded variance-preserving init.

        ``data_scale`` divides the input-layer weights so that typical data
        magnitudes produce O(1) activations; ``output_bias`` (typically the
        prior mean) makes the untrained network predict a sensible constant.
        """
        with torch.no_grad():
            for mod in self.modules():
                if isinstance(mod, nn.Linear):
                    fan_in = mod.in_features
                    mod.weight.copy_(torch.as_tensor(
                        rng.standard_normal(tuple(mod.weight.shape))
                        / np.sqrt(fan_in), dtype=DTYPE))
                    mod.bias.zero_()
            self.data_in.weight /= data_scale
            # Small output weights keep the untrained prediction close to the
            # output bias, so early data-risk solves stay in a sane regime.
            self.out.weight *= 1e-2
            if output_bias is not None:
                self.out.bias.copy_(torch.as_tensor(output_bias, dtype=DTYPE))
        return self

    def forward(self, d: torch.Tensor, w: torch.Tensor,
                sigma: torch.Tensor) -> torch.Tensor:
        if d.ndim == 1:
            return self.forward(d.unsqueeze(0), w, sigma).squeeze(0)
        if d.shape[-1] != self.n_points or w.shape[-1] != self.n_points:
            raise ShapeError(
                f"expected {self.n_points} grid points, got data {tuple(d.shape)}"
                f" and weights {tuple(w.shape)}"
            )
        batch = d.shape[0]
        w_b = w if w.ndim == 2 else w.unsqueeze(0).expand(batch, -1)
        sigma = torch.as_tensor(sigma, dtype=d.dtype)
        if sigma.ndim == 0:
            sigma = sigma.expand(batch)
        y = self.data_in(w_b * d)
        q = silu(self.w_embed[0](w_b))
        s = silu(self.s_embed[0](self.noise_in(sigma.unsqueeze(-1))))
        x = silu(y + q + s)
        for i in range(self.n_layers):
            xi = self.blocks[i](x)
            q = silu(self.w_embed[i + 1](q))
            s = silu(self.s_embed[i + 1](s))
            x = silu(xi + q + s)
        return self.out(x)

    def predict(self, d, w, sigma) -> np.ndarray:
        """Numpy-friendly evaluation-only forward pass."""
        with torch.no_grad():
            out = self.forward(
                torch.as_tensor(np.asarray(d, dtype=np.float64), dtype=DTYPE),
                torch.as_tensor(np.asarray(w, dtype=np.float64), dtype=DTYPE),
                torch.as_tensor(np.asarray(sigma, dtype=np.float64), dtype=DTYPE),
            )
        return out.numpy()


def save_network(net: LFENet, path: str | Path, model_name: str = "",
                 seed: int | None = None, design_path: str = "") -> None:
    """Write parameters as flat little-endian float64 with a JSON header."""
    names, shapes, chunks = [], [], []
    for name, p in net.named_parameters():
        names.append(name)
        shapes.append(list(p.shape))
        chunks.append(p.detach().numpy().astype("<f8").tobytes())
    header = json.dumps({
        "format": "lfe-net-1",
        "n_points": net.n_points,
        "param_dim": net.param_dim,
        "hidden": net.hidden,
        "n_layers": net.n_layers,
        "model": model_name,
        "seed": seed,
        "design_path": design_path,
        "params": names,
        "shapes": shapes,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_network(path: str | Path) -> tuple[LFENet, dict]:
    """Load a network written by :func:`save_network`; returns (net, header)."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a network file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        net = LFENet(header["n_points"], header["param_dim"],
                     header["hidden"], header["n_layers"])
        with torch.no_grad():
            params = dict(net.named_parameters())
            for name, shape in zip(header["params"], header["shapes"]):
                count = int(np.prod(shape)) if shape else 1
                raw = fh.read(8 * count)
                arr = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
                params[name].copy_(torch.as_tensor(arr, dtype=DTYPE))
    return net, header
