"""Configuration, benchmark sweeps and report writers."""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .basis import make_basis
from .model import ShimizuYamadaParams, sy_model, sy_reward
from .oracle import solve_grid
from .particles import (TEST, chaos_rate, euler_rate, simulate_limit_euler,
                        simulate_particles)
from .regression import concentration_experiment, perturbation_suite
from .stopping import (RegressionFailure, estimate_bounds, prmc_backward,
                       prmc_independent_batches, tvr_backward)

TABLE_MODES = ("prmc_ls", "tvr", "prmc_independent_batches", "rmc_ordinary")
TABLE_FIELDS = ["n_tr", "mode", "lower", "lower_se", "upper", "upper_se", "seed",
                "config_hash", "status"]

DEFAULT_CONFIG = {
    "model": {"a": 1.0, "sigma": 0.2, "x0": 1.0, "horizon": 1.0},
    "rewards": {"kind": "call", "strike": 0.1, "rate": 0.05, "num_dates": 10},
    "simulation": {
        "steps_per_date": 10,
        "n_tr": [50, 100, 300, 1000],
        "n_test": 5000,
        "n_inner": 100,
        "seeds": [0],
    },
    "basis": {"kind": "poly_reward", "degree": 2},
    "modes": ["rmc_ordinary", "prmc_ls"],
    "truncation_level": "auto",
    "rates": {
        "n_list": [64, 128, 256, 512, 1024, 2048, 4096],
        "p": 2.0,
        "n_steps": 250,
        "delta_list": [0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625],
        "n_particles": 256,
        "seeds": list(range(20)),
    },
    "pertlab": {
        "n_trials": 1000,
        "rho": 0.5,
        "seed": 0,
        "concentration": {"d": 5, "N": 2000, "M": 1.0, "delta": 0.05,
                          "abs_const": 0.1, "n_trials": 500, "seed": 0},
    },
    "outputs": {"dir": "results", "formats": ["csv", "md"]},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    @classmethod
    def from_dict(cls, data: Optional[dict] = None) -> "ExperimentConfig":
        cfg = _merge(DEFAULT_CONFIG, data or {})
        _validate(cfg)
        return cls(cfg)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        cfg = copy.deepcopy(self.raw)
        for k, v in overrides.items():
            set_path(cfg, k, v)
        _validate(cfg)
        return ExperimentConfig(cfg)

    @property
    def hash(self) -> str:
        # output location does not affect results
        content = {k: v for k, v in self.raw.items() if k != "outputs"}
        blob = json.dumps(content, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    @property
    def params(self) -> ShimizuYamadaParams:
        m, r = self.raw["model"], self.raw["rewards"]
        return ShimizuYamadaParams(a=m["a"], sigma=m["sigma"], x0=m["x0"], rate=r["rate"],
                                   strike=r["strike"], horizon=m["horizon"])

    def rewards(self):
        return sy_reward(self.params, int(self.raw["rewards"]["num_dates"]),
                         self.raw["rewards"].get("kind", "call"))

    @property
    def n_steps(self) -> int:
        return int(self.raw["simulation"]["steps_per_date"]) * int(self.raw["rewards"]["num_dates"])


def _require(cond: bool, path: str, msg: str):
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _number(cfg: dict, dotted: str) -> None:
    node = cfg
    for k in dotted.split("."):
        _require(isinstance(node, dict) and k in node, dotted, "missing")
        node = node[k]
    _require(isinstance(node, (int, float)) and not isinstance(node, bool), dotted,
             f"must be a number, got {node!r}")


def _validate(cfg: dict) -> None:
    for path in ("model.a", "model.sigma", "model.x0", "model.horizon", "rewards.strike",
                 "rewards.rate", "rewards.num_dates", "simulation.steps_per_date",
                 "simulation.n_test", "simulation.n_inner"):
        _number(cfg, path)
    m, r, s = cfg["model"], cfg["rewards"], cfg["simulation"]
    _require(m["a"] > 0, "model.a", "must be positive")
    _require(m["sigma"] >= 0, "model.sigma", "must be nonnegative")
    _require(m["horizon"] > 0, "model.horizon", "must be positive")
    _require(r["strike"] > 0, "rewards.strike", "must be positive")
    _require(r["rate"] >= 0, "rewards.rate", "must be nonnegative")
    _require(r.get("kind", "call") in ("call", "put"), "rewards.kind", "must be call or put")
    _require(int(r["num_dates"]) >= 1, "rewards.num_dates", "must be >= 1")
    _require(int(s["steps_per_date"]) >= 1, "simulation.steps_per_date", "must be >= 1")
    for key in ("n_tr", "seeds"):
        _require(isinstance(s[key], list) and len(s[key]) > 0, f"simulation.{key}",
                 "must be a nonempty list")
    _require(len(set(s["seeds"])) == len(s["seeds"]), "simulation.seeds", "must be distinct")
    _require(int(s["n_test"]) >= 2, "simulation.n_test", "must be >= 2")
    _require(int(s["n_inner"]) >= 2, "simulation.n_inner", "must be >= 2")
    _require(isinstance(cfg["modes"], list) and len(cfg["modes"]) > 0, "modes",
             "must be a nonempty list")
    for i, mode in enumerate(cfg["modes"]):
        _require(mode in TABLE_MODES, f"modes[{i}]", f"unknown mode {mode!r}")
    _require(cfg["basis"].get("kind") in ("poly_reward", "hermite"), "basis.kind",
             "must be poly_reward or hermite")
    tl = cfg["truncation_level"]
    _require(tl == "auto" or (isinstance(tl, (int, float)) and tl >= 0), "truncation_level",
             "must be 'auto' or a nonnegative number")


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("MVSTOP_WORKERS", "1")))
    except ValueError:
        return 1


def run_cell(config: ExperimentConfig, n_tr: int, mode: str, seed: int) -> dict:
    """Train one policy and estimate its bounds; deterministic in (config, n_tr, mode, seed)."""
    params = config.params
    model = sy_model(params)
    rewards = config.rewards()
    J = rewards.num_dates
    n_steps = config.n_steps
    sim = config.raw["simulation"]
    basis = make_basis(config.raw["basis"], rewards)
    tl = config.raw["truncation_level"]
    row = {"n_tr": n_tr, "mode": mode, "seed": seed, "config_hash": config.hash}
    try:
        if mode == "rmc_ordinary":
            train = simulate_limit_euler(params, n_tr, n_steps, J, seed)
            policy = prmc_backward(train, rewards, basis, tl)
            test = simulate_limit_euler(params, int(sim["n_test"]), n_steps, J, seed, purpose=TEST)
        else:
            if mode == "prmc_independent_batches":
                policy = prmc_independent_batches(model, rewards, basis, n_tr, seed,
                                                  n_steps=n_steps, truncation_level=tl)
            else:
                train = simulate_particles(model, n_tr, n_steps, J, seed)
                fit = prmc_backward if mode == "prmc_ls" else tvr_backward
                policy = fit(train, rewards, basis, tl)
            test = simulate_particles(model, int(sim["n_test"]), n_steps, J, seed, purpose=TEST)
        est = estimate_bounds(policy, model, rewards, int(sim["n_test"]), int(sim["n_inner"]),
                              seed, test_paths=test)
    except RegressionFailure as exc:
        row.update(lower=math.nan, lower_se=math.nan, upper=math.nan, upper_se=math.nan,
                   status=f"error: {exc}")
        return row
    row.update(lower=est.lower, lower_se=est.lower_se, upper=est.upper, upper_se=est.upper_se,
               status="ok")
    return row


def run_table(config: ExperimentConfig, workers: Optional[int] = None) -> list[dict]:
    sim = config.raw["simulation"]
    cells = [(int(n), mode, int(s)) for s in sim["seeds"] for n in sim["n_tr"]
             for mode in config.raw["modes"]]
    workers = workers or default_workers()
    if workers <= 1:
        rows = [run_cell(config, *c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda c: run_cell(config, *c), cells))
    order = {m: i for i, m in enumerate(config.raw["modes"])}
    return sorted(rows, key=lambda r: (r["seed"], r["n_tr"], order[r["mode"]]))


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def rows_to_csv(rows: list[dict], fields: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r[f]) for f in fields])
    return buf.getvalue()


def table_markdown(rows: list[dict], modes: list[str]) -> str:
    lines = ["| seed | N_tr | " + " | ".join(m.upper() for m in modes) + " |",
             "|" + "---|" * (len(modes) + 2)]
    by_key = {(r["seed"], r["n_tr"], r["mode"]): r for r in rows}
    for seed, n_tr in sorted({(r["seed"], r["n_tr"]) for r in rows}):
        cells = []
        for m in modes:
            r = by_key[(seed, n_tr, m)]
            if r["status"] != "ok":
                cells.append("rank error")
            else:
                cells.append(f"[{r['lower']:.4f}({r['lower_se']:.4f}), "
                             f"{r['upper']:.4f}({r['upper_se']:.4f})]")
        lines.append(f"| {seed} | {n_tr} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def run_rates(config: ExperimentConfig, workers: Optional[int] = None) -> dict:
    rc = config.raw["rates"]
    workers = workers or default_workers()
    params = config.params
    chaos = chaos_rate(params, rc["n_list"], float(rc["p"]), int(rc["n_steps"]), rc["seeds"],
                       workers=workers)
    euler = euler_rate(params, rc["delta_list"], int(rc["n_particles"]), rc["seeds"],
                       float(rc["p"]), workers=workers)
    return {"chaos": chaos, "euler": euler}


def rate_csv(report, kind: str, config_hash: str) -> str:
    rows = [{"kind": kind, "size": s, "error": e, "slope": report.slope,
             "r_squared": report.r_squared, "p": report.p, "config_hash": config_hash}
            for s, e in zip(report.sizes, report.errors)]
    return rows_to_csv(rows, ["kind", "size", "error", "slope", "r_squared", "p", "config_hash"])


def run_pertlab(config: ExperimentConfig) -> dict:
    pc = config.raw["pertlab"]
    checks = perturbation_suite(int(pc["n_trials"]), int(pc["seed"]), float(pc["rho"]))
    rows = [{"trial": i, "condition_holds": c.condition_holds, "bound": c.bound,
             "actual": c.actual, "violated": c.violated} for i, c in enumerate(checks)]
    cc = pc.get("concentration")
    conc = None
    if cc and int(cc["n_trials"]) > 0:
        conc = concentration_experiment(int(cc["d"]), int(cc["N"]), float(cc["M"]),
                                        float(cc["delta"]), float(cc["abs_const"]),
                                        int(cc["n_trials"]), int(cc["seed"]))
    return {
        "rows": rows,
        "violations": sum(r["violated"] for r in rows),
        "conditioned": sum(r["condition_holds"] for r in rows),
        "concentration": conc,
    }


def pertlab_csv(result: dict) -> str:
    return rows_to_csv(result["rows"], ["trial", "condition_holds", "bound", "actual", "violated"])


def run_oracle(config: ExperimentConfig, grid_size: int = 2001, quad_order: int = 64):
    return solve_grid(config.params, config.rewards(), grid_size=grid_size,
                      quad_order=quad_order, check_convergence=True)


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
