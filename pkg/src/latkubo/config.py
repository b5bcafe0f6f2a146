"""Experiment configuration: TOML with strict key checking.

Every key has a documented default; unknown keys are hard errors so typos
in tolerance names cannot silently change a run.  See `DEFAULTS` for the
full schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .dynamics import CompactBump, Constant, FourierCosine, PerturbationProfile
from .errors import ConfigError
from .lattice import ModelSpec

SCHEMA_VERSION = 1

DEFAULTS = {
    "model": {
        "L1": 12,
        "L2": 12,
        "flux_p": 1,
        "flux_q": 3,
        "disorder_W": 0.0,
        "seed": 0,
        "displacement": "minimal_image",
    },
    "perturbation": {
        "eps": 0.05,
        "field": [0.05, 0.0],
        "t": 0.0,
        "modulation": "constant",   # constant | fourier_cosine | compact_bump
        "omega0": 1.0,              # fourier_cosine
        "bump_t0": -1.0,            # compact_bump
        "bump_t1": 1.0,
    },
    "state": {
        "kind": "fermi_projection",  # fermi_projection | fermi_dirac
        "E_F": -1.36,
        "beta": 10.0,                # fermi_dirac
    },
    "run": {
        "routes": ["streda"],
        "eps_grid": [],              # resolvent/kubo/fd/adiabatic sweep values
        "phi_grid": [],              # fd difference amplitudes
        "beta_grid": [],             # zero-temperature sweep values
        "ensemble_n": 1,
        "dt": 1e-3,
        "workers": 1,
        "tolerances": {
            "fd_richardson": 1e-3,
            "route_fd_kubo": 1e-3,
            "route_kubo_resolvent": 1e-8,
            "tail": 1e-8,
        },
    },
    "output": {
        "directory": "out",
        "formats": ["csv", "json"],
        "figures": True,
    },
}

KNOWN_ROUTES = ("fd", "kubo", "resolvent", "adiabatic", "streda")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    perturbation: PerturbationProfile
    time: float
    state_kind: str
    E_F: float
    beta: float
    routes: tuple[str, ...]
    eps_grid: tuple[float, ...]
    phi_grid: tuple[float, ...]
    beta_grid: tuple[float, ...]
    ensemble_n: int
    dt: float
    workers: int
    tolerances: dict
    directory: Path
    formats: tuple[str, ...]
    figures: bool
    raw: dict = dataclass_field(repr=False, default_factory=dict)


def _merged(raw: dict) -> dict:
    out = {}
    for section, defaults in DEFAULTS.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section [{section}] must be a table")
        merged = {}
        for key, default in defaults.items():
            if isinstance(default, dict):
                sub = given.get(key, {})
                if not isinstance(sub, dict):
                    raise ConfigError(f"[{section}.{key}] must be a table")
                unknown = set(sub) - set(default)
                if unknown:
                    raise ConfigError(
                        f"unknown key '{section}.{key}.{sorted(unknown)[0]}'")
                merged[key] = {**default, **sub}
            else:
                merged[key] = given.get(key, default)
        unknown = set(given) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown key '{section}.{sorted(unknown)[0]}'")
        out[section] = merged
    unknown = set(raw) - set(DEFAULTS) - {"butterfly"}
    if unknown:
        raise ConfigError(f"unknown section '[{sorted(unknown)[0]}]'")
    return out


def _modulation(pert: dict):
    kind = pert["modulation"]
    if kind == "constant":
        return Constant()
    if kind == "fourier_cosine":
        return FourierCosine(float(pert["omega0"]))
    if kind == "compact_bump":
        return CompactBump(float(pert["bump_t0"]), float(pert["bump_t1"]))
    raise ConfigError(f"unknown key 'perturbation.modulation' value {kind!r}")


def parse_config(raw: dict) -> ExperimentConfig:
    cfg = _merged(raw)
    m = cfg["model"]
    try:
        model = ModelSpec(L1=int(m["L1"]), L2=int(m["L2"]),
                          flux_p=int(m["flux_p"]), flux_q=int(m["flux_q"]),
                          disorder_W=float(m["disorder_W"]), seed=int(m["seed"]),
                          displacement=str(m["displacement"]))
    except Exception as exc:
        raise ConfigError(f"model: {exc}") from exc
    p = cfg["perturbation"]
    field = [float(c) for c in p["field"]]
    if len(field) != 2:
        raise ConfigError("perturbation.field must have two components")
    try:
        profile = PerturbationProfile(float(p["eps"]), tuple(field),
                                      (_modulation(p),) * 2)
    except Exception as exc:
        raise ConfigError(f"perturbation: {exc}") from exc
    s = cfg["state"]
    if s["kind"] not in ("fermi_projection", "fermi_dirac"):
        raise ConfigError(f"unknown key 'state.kind' value {s['kind']!r}")
    r = cfg["run"]
    routes = tuple(r["routes"])
    for route in routes:
        if route not in KNOWN_ROUTES:
            raise ConfigError(f"run.routes: unknown route {route!r}")
    if not routes:
        raise ConfigError("run.routes must not be empty")
    for grid_name in ("eps_grid", "phi_grid", "beta_grid"):
        vals = r[grid_name]
        if any(float(v) <= 0 for v in vals):
            raise ConfigError(f"run.{grid_name} entries must be positive")
    if float(r["dt"]) <= 0:
        raise ConfigError("run.dt must be positive")
    if int(r["ensemble_n"]) < 1:
        raise ConfigError("run.ensemble_n must be >= 1")
    tol = {k: float(v) for k, v in r["tolerances"].items()}
    if any(v <= 0 for v in tol.values()):
        raise ConfigError("run.tolerances entries must be positive")
    o = cfg["output"]
    formats = tuple(o["formats"])
    for f in formats:
        if f not in ("csv", "json"):
            raise ConfigError(f"output.formats: unknown format {f!r}")
    beta = float(s["beta"])
    if s["kind"] == "fermi_dirac" and beta <= 0:
        raise ConfigError("state.beta must be positive")
    if not math.isfinite(float(s["E_F"])):
        raise ConfigError("state.E_F must be finite")
    return ExperimentConfig(
        model=model,
        perturbation=profile,
        time=float(p["t"]),
        state_kind=str(s["kind"]),
        E_F=float(s["E_F"]),
        beta=beta,
        routes=routes,
        eps_grid=tuple(float(v) for v in r["eps_grid"]),
        phi_grid=tuple(float(v) for v in r["phi_grid"]),
        beta_grid=tuple(float(v) for v in r["beta_grid"]),
        ensemble_n=int(r["ensemble_n"]),
        dt=float(r["dt"]),
        workers=max(1, int(r["workers"])),
        tolerances=tol,
        directory=Path(str(o["directory"])),
        formats=formats,
        figures=bool(o["figures"]),
        raw=cfg,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    return parse_config(raw)


def butterfly_options(path: str | Path) -> dict:
    """[butterfly] section: qmax and momentum grid of the flux sweep."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    section = raw.get("butterfly", {})
    defaults = {"qmax": 20, "grid": 24}
    unknown = set(section) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown key 'butterfly.{sorted(unknown)[0]}'")
    out = {**defaults, **section}
    if int(out["qmax"]) < 1 or int(out["grid"]) < 1:
        raise ConfigError("butterfly.qmax and butterfly.grid must be >= 1")
    return {"qmax": int(out["qmax"]), "grid": int(out["grid"])}
