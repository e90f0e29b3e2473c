"""Experiment sweeps over target rate, CSI level and seed for the caching /
beamforming scheme combinations, plus result serialisation."""

from __future__ import annotations

import configparser
import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .beamforming import AoConfig, CcpConfig, InitializationError, alternating_optimize, initialize_state
from .cache import backhaul_cost, make_placement
from .channel import SceneConfig, generate_scene, parse_scene_values
from .robustness import empirical_outage, worst_case_certificate

log = logging.getLogger(__name__)

SCHEMES = ("OJB-OC", "OJB-UC", "RandomPhase-OC", "RandomPhase-UC")
COLUMNS = (
    "scheme", "gamma_bps_hz", "delta_g", "seed", "power_w", "backhaul_cost", "network_cost",
    "outer_iters", "feasible", "min_rate_certified", "empirical_outage", "wall_time_s",
)


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    gammas: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
    delta_gs: tuple[float, ...] = (0.01, 0.001)
    schemes: tuple[str, ...] = SCHEMES
    seeds: tuple[int, ...] = tuple(range(10))
    eta: float = 100.0
    n_files: int = 200
    storage: float = 100.0
    zipf: float = 1.0
    outage: float = 0.05
    cert_samples: int = 500
    outage_draws: int = 2000
    # per-user delivery rate for the backhaul cost; None uses the target rate
    delivery_rate: float | None = None
    ao: AoConfig = field(default_factory=AoConfig)
    # when False, wall_time_s is written as 0.0 so records compare bit-exactly
    timing: bool = True

    def validate(self) -> None:
        if not (self.gammas and self.delta_gs and self.schemes and self.seeds):
            raise ValueError("gammas, delta_gs, schemes and seeds must be nonempty")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise ValueError(f"unknown schemes {bad}; choose from {SCHEMES}")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if any(g < 0 for g in self.gammas):
            raise ValueError("target rates must be >= 0")
        if not 0.0 < self.outage < 1.0:
            raise ValueError("outage must lie in (0, 1)")
        if self.storage < 0 or self.n_files < 1:
            raise ValueError("storage must be >= 0 and n_files >= 1")
        self.scene.validate()


@dataclass
class ExperimentRecord:
    scheme: str
    gamma_bps_hz: float
    delta_g: float
    seed: int
    power_w: float
    backhaul_cost: float
    network_cost: float
    outer_iters: int
    feasible: bool
    min_rate_certified: float
    empirical_outage: float
    wall_time_s: float
    # kept out of the emitted table
    W: np.ndarray | None = field(default=None, repr=False, compare=False)
    e: np.ndarray | None = field(default=None, repr=False, compare=False)
    error: str = field(default="", compare=False)

    def row(self) -> dict:
        return {c: getattr(self, c) for c in COLUMNS}

    @property
    def key(self) -> str:
        return f"{self.scheme}|{self.gamma_bps_hz!r}|{self.delta_g!r}|{self.seed}"


def network_cost(c, b, delivery_rates, n_users: int, W, eta: float) -> float:
    """Backhaul cost plus eta times total transmit power."""
    power = float(np.vdot(W, W).real) if W is not None else 0.0
    return backhaul_cost(c, b, delivery_rates, n_users) + eta * power


# ---------------------------------------------------------------- config

_LIST_KEYS = {"gammas": float, "delta_gs": float, "schemes": str, "seeds": int}
_EXP_KEYS = {
    "eta": float, "n_files": int, "storage": float, "zipf": float, "outage": float,
    "cert_samples": int, "outage_draws": int, "delivery_rate": float,
}
_AO_KEYS = {
    "rel_tol": float, "max_outer": int, "estep_interference": str, "init_restarts": int,
    "bootstrap_iters": int, "bootstrap_penalty": float, "solver_tol": float,
}
_CCP_PREFIX = "ccp_"


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_list(raw: str, kind) -> tuple:
    out = []
    for part in raw.replace(",", " ").split():
        if kind is int and ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(kind(part))
    return tuple(out)


def parse_experiment_values(values: dict[str, str]) -> ExperimentConfig:
    """Split flat ``key -> text`` pairs into scene, sweep, AO and CCP settings."""
    scene_keys = {f.name for f in fields(SceneConfig)} - {"user_positions"}
    ccp_keys = {f.name for f in fields(CcpConfig)}
    scene, exp, ao, ccp = {}, {}, {}, {}
    for key, raw in values.items():
        if key in scene_keys:
            scene[key] = raw
        elif key in _LIST_KEYS:
            exp[key] = _parse_list(raw, _LIST_KEYS[key])
        elif key in _EXP_KEYS:
            exp[key] = _EXP_KEYS[key](raw)
        elif key == "timing":
            exp[key] = _parse_bool(raw)
        elif key in _AO_KEYS:
            ao[key] = _AO_KEYS[key](raw)
        elif key == "init_converge":
            ao[key] = _parse_bool(raw)
        elif key.startswith(_CCP_PREFIX) and key[len(_CCP_PREFIX):] in ccp_keys:
            name = key[len(_CCP_PREFIX):]
            if name == "project_anchor":
                ccp[name] = _parse_bool(raw)
            else:
                ccp[name] = int(raw) if name in ("max_inner", "max_restarts") else float(raw)
        else:
            raise KeyError(f"unknown config key {key!r}")
    ao_cfg = AoConfig(**ao, ccp=CcpConfig(**ccp))
    cfg = ExperimentConfig(scene=parse_scene_values(scene), ao=ao_cfg, **exp)
    cfg.validate()
    return cfg


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string("[experiment]\n" + Path(path).read_text())
    return parse_experiment_values(dict(parser["experiment"]))


# ---------------------------------------------------------------- running

@dataclass
class _Design:
    W: np.ndarray | None
    e: np.ndarray | None
    outer_iters: int
    seconds: float
    error: str = ""


def _designs(cfg: ExperimentConfig, gamma: float, delta_g: float, seed: int, beams: set[str]):
    """Random-phase and jointly optimised designs for one drop.

    Both share e(0): the random-phase design is the converged precoder at
    e(0), and the joint design continues from it.
    """
    scene = generate_scene(cfg.scene, seed=seed, delta_g=delta_g, outage=cfg.outage)
    out = {}
    t0 = time.perf_counter()
    try:
        init = initialize_state(scene, gamma, seed, cfg.ao)
    except InitializationError as exc:
        dt = time.perf_counter() - t0
        return scene, {b: _Design(None, None, 0, dt, str(exc)) for b in beams}
    t_init = time.perf_counter() - t0
    out["RandomPhase"] = _Design(init.W, init.e, init.precoder_solves, t_init)
    if "OJB" in beams:
        t1 = time.perf_counter()
        state, report = alternating_optimize(scene, gamma, cfg.ao, seed, state=init)
        # a failed step still leaves the best feasible design in ``state``
        out["OJB"] = _Design(state.W, state.e, report.outer_iters, t_init + time.perf_counter() - t1)
    return scene, out


def _run_group(args) -> list[ExperimentRecord]:
    cfg, gamma, delta_g, seed = args
    K = cfg.scene.k_users
    beams = {s.split("-")[0] for s in cfg.schemes}
    scene, designs = _designs(cfg, gamma, delta_g, seed, beams)
    rate = gamma if cfg.delivery_rate is None else cfg.delivery_rate
    certs = {}
    records = []
    for scheme in cfg.schemes:
        beam, caching = scheme.split("-")
        d = designs[beam]
        placement = make_placement(cfg.n_files, cfg.zipf, cfg.storage, caching)
        bh = backhaul_cost(placement.placement, placement.popularity, rate, K)
        if d.W is None:
            records.append(ExperimentRecord(
                scheme, gamma, delta_g, seed, math.nan, bh, math.nan, d.outer_iters, False,
                math.nan, math.nan, d.seconds if cfg.timing else 0.0, error=d.error))
            continue
        t0 = time.perf_counter()
        if beam not in certs:
            rep = worst_case_certificate(d.W, d.e, scene, gamma, cfg.cert_samples, seed)
            out = empirical_outage(d.W, d.e, scene, gamma, cfg.outage_draws, seed)
            certs[beam] = (rep, out)
        rep, out = certs[beam]
        power = float(np.vdot(d.W, d.W).real)
        wall = d.seconds + time.perf_counter() - t0
        records.append(ExperimentRecord(
            scheme, float(gamma), float(delta_g), int(seed), power, bh, bh + cfg.eta * power,
            int(d.outer_iters), not d.error and rep.violations == 0, float(np.min(rep.min_rate)), out,
            wall if cfg.timing else 0.0, W=d.W, e=d.e, error=d.error))
    return records


def run_experiment(cfg: ExperimentConfig, parallel: int = 1) -> list[ExperimentRecord]:
    """One record per (scheme, gamma, delta_g, seed), ordered by that key."""
    cfg.validate()
    groups = [(cfg, g, d, s) for g in cfg.gammas for d in cfg.delta_gs for s in cfg.seeds]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            chunks = list(pool.map(_run_group, groups))
    else:
        chunks = [_run_group(g) for g in groups]
    order = {s: i for i, s in enumerate(cfg.schemes)}
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (order[r.scheme], cfg.gammas.index(r.gamma_bps_hz),
                                cfg.delta_gs.index(r.delta_g), cfg.seeds.index(r.seed)))
    return records


# ---------------------------------------------------------------- output

def emit_results(records: list[ExperimentRecord], fmt: str, path: str | Path) -> None:
    """Write the table as CSV or JSON and the designs to ``<path>.solutions.npz``."""
    if not records:
        raise ValueError("no records to emit")
    path = Path(path)
    rows = [r.row() for r in records]
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=COLUMNS)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    elif fmt == "json":
        path.write_text(json.dumps(rows, indent=1))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    arrays = {}
    for r in records:
        if r.W is not None:
            arrays[r.key + "|W"] = r.W
            arrays[r.key + "|e"] = r.e
    np.savez(solutions_path(path), **arrays)


def solutions_path(path: str | Path) -> Path:
    return Path(str(path) + ".solutions.npz")


def _coerce(col: str, raw):
    if col == "scheme":
        return str(raw)
    if col in ("seed", "outer_iters"):
        return int(raw)
    if col == "feasible":
        return raw if isinstance(raw, bool) else raw == "True"
    return float(raw)


def load_results(path: str | Path) -> list[ExperimentRecord]:
    """Read a CSV or JSON results file (with designs, when the sidecar exists)."""
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("["):
        rows = json.loads(text)
    else:
        rows = list(csv.DictReader(text.splitlines()))
    records = [ExperimentRecord(**{c: _coerce(c, row[c]) for c in COLUMNS}) for row in rows]
    side = solutions_path(path)
    if side.exists():
        with np.load(side) as data:
            for i, r in enumerate(records):
                if r.key + "|W" in data:
                    records[i] = replace(r, W=data[r.key + "|W"], e=data[r.key + "|e"])
    return records


@dataclass
class VerifyOutcome:
    key: str
    min_rate: float
    violations: int
    ok: bool


def verify_results(records: list[ExperimentRecord], cfg: ExperimentConfig, n_samples: int | None = None,
                   tol: float = 1e-3) -> list[VerifyOutcome]:
    """Re-certify stored designs against freshly generated scenes."""
    out = []
    for r in records:
        if r.W is None:
            out.append(VerifyOutcome(r.key, math.nan, 0, not r.feasible))
            continue
        scene = generate_scene(cfg.scene, seed=r.seed, delta_g=r.delta_g, outage=cfg.outage)
        rep = worst_case_certificate(r.W, r.e, scene, r.gamma_bps_hz, n_samples or cfg.cert_samples,
                                     r.seed + 1, tol=tol)
        out.append(VerifyOutcome(r.key, float(np.min(rep.min_rate)), rep.violations, rep.violations == 0))
    return out


def summarize(records: list[ExperimentRecord]) -> dict:
    """Seed-averaged power and network cost per (scheme, gamma, delta_g)."""
    acc: dict[tuple, list] = {}
    for r in records:
        acc.setdefault((r.scheme, r.gamma_bps_hz, r.delta_g), []).append(r)
    out = {}
    for key, rs in acc.items():
        out[key] = {
            "power_w": float(np.mean([r.power_w for r in rs])),
            "network_cost": float(np.mean([r.network_cost for r in rs])),
            "backhaul_cost": float(np.mean([r.backhaul_cost for r in rs])),
            "feasible": sum(r.feasible for r in rs),
            "count": len(rs),
        }
    return out
