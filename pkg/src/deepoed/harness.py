"""Config-driven experiment orchestration and CSV artifact emission."""

from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import yaml

from .baselines import PassCounter, aopt_best, greedy_search
from .designers import (
    ContinuousDesignEstimator,
    DesignWeights,
    TabuDesignEstimator,
    fit_network,
    history_to_csv,
)
from .exceptions import ConfigError
from .grids import linear_grid, log_grid
from .models import exp_design_matrix, make_model, MODEL_NAMES
from .network import save_network
from .risk import RiskReport, evaluate
from .stochastic import rng_from, task_seed

__all__ = [
    "ExperimentConfig",
    "load_config",
    "run_experiment",
    "random_design_baseline",
    "gamma_sweep",
    "DESK_SCALE",
]

METHODS = ("continuous", "tabu", "greedy", "aopt", "random")

# Desk-scale preset: small batches, shortened schedules and reduced grids so
# a full pipeline runs on a laptop CPU in minutes.
DESK_SCALE = {
    "train": {
        "batch_size": 256,
        "phase1_cap": 5000,
        "phase2_iters": 1000,
        "tabu_total_iters": 30,
        "outer_iter": 3,
        "inner_iter": 150,
        "pretrain_iters": 200,
        "shrink_rho": 5e-3,
        "lr_w": 0.2,
    },
    "eval": {"n_sets": 10, "set_size": 512},
    "n_random_designs": 10,
    "grids": {
        "ppm": {"kind": "linear", "n": 50, "t_max": 30.0, "substeps": 1},
        "3tc": {"kind": "log", "n": 60, "t_max": 1e3},
        "exp": {"kind": "linear", "n": 100, "t_max": 100.0, "substeps": 2},
    },
}

_TRAIN_KEYS = {
    "batch_size", "gamma", "lr_theta", "lr_w", "shrink_rho", "phase1_cap",
    "phase2_iters", "outer_iter", "inner_iter", "neighbor_subset",
    "tabu_list_len", "tabu_total_iters", "pretrain_iters", "hidden",
    "n_layers",
}


@dataclass
class ExperimentConfig:
    """One experiment: a model, a method, and the sweeps to run."""

    model: str = "ppm"
    method: str = "continuous"
    sparsity: list = field(default_factory=lambda: [4])
    gamma: list = field(default_factory=lambda: [1.0])
    seed: int = 0
    out: str = "results"
    desk_scale: bool = False
    eval: dict = field(default_factory=lambda: {"n_sets": 50, "set_size": 3500})
    train: dict = field(default_factory=dict)
    n_random_designs: int = 100
    random_mode: str = "continuous"
    aopt_sigma: float = 0.1

    def __post_init__(self):
        if self.model not in MODEL_NAMES:
            raise ConfigError(
                f"model: unknown model {self.model!r}; choose from {MODEL_NAMES}")
        if self.method not in METHODS:
            raise ConfigError(
                f"method: unknown method {self.method!r}; choose from {METHODS}")
        unknown = set(self.train) - _TRAIN_KEYS
        if unknown:
            raise ConfigError(f"train: unknown keys {sorted(unknown)}")
        n = self.grid_size()
        for s in self.sparsity:
            if not 0 <= int(s) <= n:
                raise ConfigError(f"sparsity: {s} outside [0, {n}]")
        if self.random_mode not in ("continuous", "binary"):
            raise ConfigError("random_mode: must be 'continuous' or 'binary'")

    def build_model(self):
        if not self.desk_scale:
            return make_model(self.model)
        spec = DESK_SCALE["grids"][self.model]
        maker = linear_grid if spec["kind"] == "linear" else log_grid
        grid = maker(spec["n"], spec["t_max"])
        kwargs = {}
        if "substeps" in spec:
            kwargs["substeps"] = spec["substeps"]
        return make_model(self.model, grid=grid, **kwargs)

    def grid_size(self) -> int:
        if self.desk_scale:
            return DESK_SCALE["grids"][self.model]["n"]
        return {"3tc": 400, "ppm": 200, "exp": 100}[self.model]

    def train_params(self) -> dict:
        params = dict(self.train)
        if self.desk_scale:
            params = {**DESK_SCALE["train"], **params}
        return params

    def eval_params(self) -> dict:
        if self.desk_scale:
            return {**DESK_SCALE["eval"], **{k: v for k, v in self.eval.items()
                                             if k in ("n_sets", "set_size")
                                             and not self._eval_is_default()}}
        return dict(self.eval)

    def _eval_is_default(self) -> bool:
        return self.eval == {"n_sets": 50, "set_size": 3500}

    def n_designs(self) -> int:
        if self.desk_scale and self.n_random_designs == 100:
            return DESK_SCALE["n_random_designs"]
        return self.n_random_designs


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    try:
        return ExperimentConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _split_train(params: dict, cls) -> dict:
    allowed = set(cls.__init__.__code__.co_varnames)
    return {k: v for k, v in params.items() if k in allowed}


def _train_design(cfg: ExperimentConfig, model, sparsity: int, gamma: float,
                  seed_seq):
    params = cfg.train_params()
    params.pop("pretrain_iters", None)
    seed = int(seed_seq.generate_state(1)[0])
    if cfg.method == "continuous":
        est = ContinuousDesignEstimator(
            model=model, sparsity_target=sparsity, gamma=gamma,
            random_state=seed,
            **_split_train(params, ContinuousDesignEstimator))
        est.fit()
        return est
    est = TabuDesignEstimator(
        model=model, sparsity_target=sparsity, gamma=gamma, random_state=seed,
        **_split_train(params, TabuDesignEstimator))
    w_init = tabu_init_design(cfg, model, sparsity, gamma, seed_seq)
    est.fit(w_init=w_init)
    return est


def tabu_init_design(cfg: ExperimentConfig, model, sparsity: int, gamma: float,
                     seed_seq) -> np.ndarray:
    """Best-of-n random binary designs from short runs off a pretrained net.

    A network is pretrained on one random design, then briefly adapted to
    each candidate design; the design with the lowest total risk seeds the
    tabu search.
    """
    params = cfg.train_params()
    pre_iters = params.get("pretrain_iters", 500)
    batch = params.get("batch_size", 3500)
    rng = rng_from(seed_seq.spawn(1)[0])
    n = model.n_points
    w0 = np.zeros(n)
    w0[rng.choice(n, size=sparsity, replace=False)] = 1.0
    base_net, _ = fit_network(model, w0, pre_iters, rng, batch_size=batch,
                              gamma=gamma,
                              hidden=params.get("hidden", 32),
                              n_layers=params.get("n_layers", 3))
    base_state = copy.deepcopy(base_net.state_dict())
    ev = cfg.eval_params()
    best_w, best_lt = w0, math.inf
    for k in range(cfg.n_designs()):
        w = np.zeros(n)
        w[rng.choice(n, size=sparsity, replace=False)] = 1.0
        base_net.load_state_dict(copy.deepcopy(base_state))
        net, _ = fit_network(model, w, max(1, pre_iters // 4), rng,
                             net=base_net, batch_size=batch, gamma=gamma)
        report = evaluate(model, net, w, n_sets=max(2, ev["n_sets"] // 5),
                          set_size=ev["set_size"], gamma=gamma,
                          seed=seed_seq.spawn(1)[0])
        if report.l_t < best_lt:
            best_lt, best_w = report.l_t, w
    return best_w


def random_design_baseline(cfg: ExperimentConfig, model, sparsity: int,
                           gamma: float, seed_seq, mode: str | None = None):
    """Risk of networks trained on random designs.

    Continuous mode draws entries from Uniform(0, 2); binary mode activates
    a random subset of the given sparsity.  Returns (reports, summary) where
    the summary holds mean/std/min of total and parameter risk.
    """
    mode = mode or cfg.random_mode
    params = cfg.train_params()
    ev = cfg.eval_params()
    iters = params.get("pretrain_iters", 500)
    rng = rng_from(seed_seq.spawn(1)[0])
    reports = []
    for k in range(cfg.n_designs()):
        if mode == "continuous":
            w = rng.uniform(0.0, 2.0, size=model.n_points)
        else:
            w = np.zeros(model.n_points)
            w[rng.choice(model.n_points, size=sparsity, replace=False)] = 1.0
        net, _ = fit_network(model, w, iters, rng,
                             batch_size=params.get("batch_size", 3500),
                             gamma=gamma,
                             hidden=params.get("hidden", 32),
                             n_layers=params.get("n_layers", 3))
        rep = evaluate(model, net, w, n_sets=ev["n_sets"],
                       set_size=ev["set_size"], gamma=gamma,
                       seed=seed_seq.spawn(1)[0],
                       method=f"random-{mode}", sparsity=sparsity)
        rep.seed = cfg.seed
        reports.append(rep)
    lt = np.array([r.l_t for r in reports])
    lq = np.array([r.l_q for r in reports])
    summary = {
        "mean_l_T": float(lt.mean()), "std_l_T": float(lt.std(ddof=1)) if len(lt) > 1 else 0.0,
        "min_l_T": float(lt.min()),
        "mean_l_q": float(lq.mean()), "std_l_q": float(lq.std(ddof=1)) if len(lq) > 1 else 0.0,
        "min_l_q": float(lq.min()),
    }
    return reports, summary


def gamma_sweep(cfg: ExperimentConfig, sparsity: int | None = None,
                gammas=(0.0, 1.0, 10.0, 1e2, 1e3, 1e4)):
    """Train one design per gamma at fixed sparsity; report (l_q, l_d) rows."""
    model = cfg.build_model()
    if sparsity is None:
        sparsity = {"3tc": 6, "ppm": 4, "exp": 4}[cfg.model]
    rows = []
    for gamma in gammas:
        seq = task_seed(cfg.seed, f"gamma-sweep/{cfg.model}/{sparsity}/{gamma}")
        est = _train_design(cfg, model, sparsity, float(gamma), seq)
        ev = cfg.eval_params()
        rep = evaluate(model, est.net_, est.w_, n_sets=ev["n_sets"],
                       set_size=ev["set_size"], gamma=float(gamma),
                       seed=seq.spawn(1)[0], method=cfg.method,
                       sparsity=sparsity)
        rows.append({"model": cfg.model, "sparsity": sparsity,
                     "gamma": float(gamma), "l_q": rep.l_q, "l_d": rep.l_d})
    return rows


def _log_errorbar_halfwidth(l_t: float, sem: float) -> float:
    if l_t <= 0:
        return 0.0
    return math.log10(l_t + sem) - math.log10(l_t)


def run_experiment(cfg: ExperimentConfig) -> list[Path]:
    """Execute the configured tasks; returns the list of files written."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    reports: list[RiskReport] = []
    model = cfg.build_model()
    ev = cfg.eval_params()

    if cfg.method == "aopt":
        A = exp_design_matrix(make_model("exp").grid)
        path = out / "aopt.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "method", "sparsity", "loss"])
            for s in cfg.sparsity:
                _, loss = aopt_best(A, int(s), cfg.aopt_sigma)
                writer.writerow(["exp", "aopt", int(s), repr(loss)])
        return [path]

    if cfg.method == "greedy":
        path = out / "greedy.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "method", "sparsity", "times",
                            "forward_passes", "backward_passes",
                            "seconds_per_pass_mean", "seconds_per_pass_std"])
            for s in cfg.sparsity:
                seq = task_seed(cfg.seed, f"greedy/{cfg.model}/{s}")
                params = cfg.train_params()
                design, counter, _ = greedy_search(
                    model, int(s), rng_from(seq.spawn(1)[0]),
                    batch_size=params.get("batch_size", 3500))
                mean_s, std_s = counter.seconds_per_pass()
                times = model.grid.points[design.values > 0.5]
                writer.writerow([
                    cfg.model, "greedy", int(s),
                    " ".join(repr(float(t)) for t in times),
                    counter.forward_passes, counter.backward_passes,
                    repr(mean_s), repr(std_s)])
        return [path]

    if cfg.method == "random":
        for s in cfg.sparsity:
            for gamma in cfg.gamma:
                seq = task_seed(cfg.seed, f"random/{cfg.model}/{s}/{gamma}")
                reps, summary = random_design_baseline(
                    cfg, model, int(s), float(gamma), seq)
                reports.extend(reps)
                spath = out / f"random_summary_s{s}_g{gamma}.json"
                spath.write_text(json.dumps(summary, indent=2))
                written.append(spath)
        path = out / "risk.csv"
        RiskReport.write_csv(reports, path)
        return written + [path]

    # continuous / tabu training
    for s in cfg.sparsity:
        for gamma in cfg.gamma:
            tag = f"{cfg.method}_{cfg.model}_s{s}_g{gamma}"
            seq = task_seed(cfg.seed, f"train/{cfg.method}/{cfg.model}/{s}/{gamma}")
            est = _train_design(cfg, model, int(s), float(gamma), seq)
            rep = evaluate(model, est.net_, est.w_, n_sets=ev["n_sets"],
                           set_size=ev["set_size"], gamma=float(gamma),
                           seed=seq.spawn(1)[0], method=cfg.method,
                           sparsity=int(s))
            rep.seed = cfg.seed
            reports.append(rep)
            wpath = out / f"{tag}_w.csv"
            DesignWeights(
                est.w_,
                mode="binary" if cfg.method == "tabu" else "continuous",
            ).to_csv(wpath, model.grid)
            hpath = out / f"{tag}_history.csv"
            history_to_csv(est.history_, hpath)
            npath = out / f"{tag}.lfe"
            save_network(est.net_, npath, model_name=cfg.model,
                         seed=cfg.seed, design_path=wpath.name)
            written.extend([wpath, hpath, npath])
    path = out / "risk.csv"
    RiskReport.write_csv(reports, path)
    plot_path = out / "plot_risk.csv"
    with open(plot_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "method", "sparsity", "gamma", "l_T",
                         "sem_l_T", "log10_errorbar_halfwidth"])
        for rep in reports:
            writer.writerow([
                rep.model, rep.method, rep.sparsity, repr(rep.gamma),
                repr(rep.l_t), repr(rep.sem_l_t),
                repr(_log_errorbar_halfwidth(rep.l_t, rep.sem_l_t))])
    return written + [path, plot_path]
