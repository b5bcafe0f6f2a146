"""Configuration-driven sweeps: schedule, compute, and persist reports.

Sweep points are generated in a canonical order and dispatched to a
bounded thread pool; results are written back in submission order, so a
given configuration always produces byte-identical CSV output apart from
the wall_ms column.  Numerical failures become per-row error entries and
never abort the sweep.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plots
from .config import ExperimentConfig
from .errors import DiagonalObstruction, LatKuboError
from .lattice import (
    bloch_reduce,
    build_model,
    chern_number,
    fermi_dirac_state,
    fermi_projection,
)
from .operators import TracialAlgebra
from .reports import ReportRow, write_csv, write_json
from .response import (
    adiabatic_conductivity,
    conductivity_fd,
    conductivity_kubo,
    conductivity_resolvent,
    hall_pair,
    kubo_streda,
    zero_temperature_sweep,
)

TWO_PI = 2.0 * np.pi


@dataclass
class ExperimentResult:
    rows: list[ReportRow]
    summary: dict
    files: list[Path] = field(default_factory=list)
    exit_status: int = 0


def _matrix_rows(route: str, sigma, err=None, *, eps=None, phi=None, beta=None,
                 seed=None, wall_ms=None) -> list[ReportRow]:
    rows = []
    d, nJ = sigma.shape
    for k in range(d):
        for j in range(nJ):
            val = float(sigma[k, j])
            rows.append(ReportRow(
                route=route, k=k + 1, j=j + 1,
                sigma=None if np.isnan(val) else val,
                eps=eps, phi_k=phi, beta=beta, seed=seed,
                est_error=None if err is None else float(err[k, j]),
                wall_ms=wall_ms))
    return rows


def _error_rows(route: str, message: str, *, eps=None, phi=None, beta=None,
                seed=None, d: int = 2) -> list[ReportRow]:
    return [ReportRow(route=route, k=k + 1, j=j + 1, sigma=None, eps=eps,
                      phi_k=phi, beta=beta, seed=seed, error=message)
            for k in range(d) for j in range(d)]


def chern_reference(config: ExperimentConfig) -> dict | None:
    """Chern integers of the occupied bands for clean rational-flux projections."""
    model = config.model
    if not model.clean or config.state_kind != "fermi_projection":
        return None
    opset = build_model(model)
    evals = opset.spectral.eigenvalues
    n_occ = int(np.sum(evals <= config.E_F))
    bands = n_occ * model.flux_q
    if bands % model.dim or bands == 0 or bands == model.flux_q * model.dim:
        return None
    band_count = bands // model.dim
    try:
        c = chern_number(bloch_reduce(model), band_count)
    except LatKuboError:
        return None
    return {"band_count": band_count, "12": c, "21": -c}


def _point_tasks(config: ExperimentConfig):
    """Canonical (ordered) list of sweep points."""
    eps_values = config.eps_grid or (config.perturbation.eps,)
    phi_values = config.phi_grid or (0.02,)
    for realization in range(config.ensemble_n):
        for route in config.routes:
            if route == "streda":
                yield (route, None, None, None, realization)
            elif route == "adiabatic":
                yield (route, None, None, None, realization)
            elif route == "fd":
                for eps in eps_values:
                    for phi in phi_values:
                        yield (route, eps, phi, None, realization)
            elif route in ("kubo", "resolvent"):
                for eps in eps_values:
                    yield (route, eps, None, None, realization)
                if config.beta_grid and route == "resolvent":
                    for beta in config.beta_grid:
                        yield (route, eps_values[0], None, beta, realization)


def _run_point(config: ExperimentConfig, point) -> list[ReportRow]:
    route, eps, phi, beta, realization = point
    alg = TracialAlgebra(config.model.dim)
    start = time.perf_counter()
    try:
        opset = build_model(config.model, realization_index=realization)
        S = opset.spectral
        J_list = hall_pair(opset)
        if beta is not None:
            rho = fermi_dirac_state(S, beta, config.E_F)
        elif config.state_kind == "fermi_dirac":
            rho = fermi_dirac_state(S, config.beta, config.E_F)
        else:
            rho = fermi_projection(S, config.E_F)
        p = config.perturbation if eps is None else config.perturbation.with_eps(eps)
        if route == "streda":
            P = fermi_projection(S, config.E_F)
            sigma = np.zeros((2, 2))
            for k in range(2):
                for j in range(2):
                    sigma[k, j] = kubo_streda(alg, S, P, opset, k, j)
            rows = _matrix_rows(route, sigma, seed=realization)
        elif route == "adiabatic":
            eps_grid = config.eps_grid or (0.2, 0.1, 0.05, 0.025)
            try:
                result = adiabatic_conductivity(opset, rho, J_list,
                                                eps_grid=eps_grid, alg=alg)
                rows = _matrix_rows(route, result.matrix, seed=realization)
            except DiagonalObstruction:
                # clean finite tori carry a Drude-type divergence on the
                # longitudinal entries; keep the Hall pair and annotate
                result = adiabatic_conductivity(
                    opset, rho, J_list, eps_grid=eps_grid,
                    pairs=[(0, 1), (1, 0)], alg=alg)
                rows = _matrix_rows(route, result.matrix, seed=realization)
                for row in rows:
                    if row.k == row.j:
                        row.sigma = None
                        row.error = ("DiagonalObstruction: longitudinal "
                                     "adiabatic limit diverges on the torus")
            for i, e in enumerate(result.eps_grid):
                rows += _matrix_rows(route, result.sweep[i], eps=e,
                                     seed=realization)
        elif route == "fd":
            sigma, err = conductivity_fd(
                opset, p, J_list, rho, config.time, phi, config.dt,
                tol=config.tolerances.get("fd_richardson", 1e-3), alg=alg)
            rows = _matrix_rows(route, sigma, err, eps=eps, phi=phi,
                                seed=realization, beta=beta)
        elif route == "kubo":
            sigma, err = conductivity_kubo(
                opset, p, J_list, rho, config.time, config.dt,
                tail_tol=config.tolerances.get("tail", 1e-8), alg=alg)
            rows = _matrix_rows(route, sigma, err, eps=eps, seed=realization,
                                beta=beta)
        elif route == "resolvent":
            sigma = conductivity_resolvent(opset, p, rho, J_list, config.time,
                                           alg=alg)
            rows = _matrix_rows(route, sigma, eps=eps, seed=realization,
                                beta=beta)
        else:
            rows = _error_rows(route, f"unknown route {route!r}",
                               seed=realization)
    except LatKuboError as exc:
        return _error_rows(route, f"{type(exc).__name__}: {exc}", eps=eps,
                           phi=phi, beta=beta, seed=realization)
    wall_ms = (time.perf_counter() - start) * 1000.0
    for row in rows:
        row.wall_ms = round(wall_ms, 3)
    return rows


def route_agreement(rows: list[ReportRow], tolerances: dict) -> dict:
    """Pairwise max |sigma_a - sigma_b| over matching (eps, beta, seed, k, j)."""
    by_route: dict[str, dict] = {}
    for row in rows:
        if row.sigma is None:
            continue
        key = (row.eps, row.beta, row.seed, row.k, row.j)
        by_route.setdefault(row.route, {})[key] = row.sigma
    routes = sorted(by_route)
    table = {}
    for i, a in enumerate(routes):
        for b in routes[i + 1:]:
            common = set(by_route[a]) & set(by_route[b])
            if not common:
                continue
            dev = max(abs(by_route[a][key] - by_route[b][key]) for key in common)
            table[f"{a}|{b}"] = {"max_abs_difference": dev,
                                 "points": len(common)}
    declared = {"fd|kubo": tolerances.get("route_fd_kubo", 1e-3),
                "kubo|resolvent": tolerances.get("route_kubo_resolvent", 1e-8)}
    return {"pairs": table, "declared_tolerances": declared}


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    rows: list[ReportRow] = []
    points = list(_point_tasks(config))
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            for chunk in pool.map(lambda pt: _run_point(config, pt), points):
                rows.extend(chunk)
    else:
        for pt in points:
            rows.extend(_run_point(config, pt))

    summary = {
        "config": config.raw,
        "route_agreement": route_agreement(rows, config.tolerances),
        "chern_reference": chern_reference(config),
        "rows": len(rows),
        "errors": sum(1 for r in rows if r.error),
    }
    result = ExperimentResult(rows=rows, summary=summary)

    outdir = config.directory
    outdir.mkdir(parents=True, exist_ok=True)
    if "csv" in config.formats:
        result.files.append(write_csv(outdir / "conductivity.csv", rows))
    if "json" in config.formats:
        result.files.append(write_json(outdir / "summary.json", summary))
    if config.figures:
        result.files.extend(_render_figures(config, rows, outdir))
    result.exit_status = 1 if summary["errors"] == len(rows) and rows else 0
    return result


def _render_figures(config: ExperimentConfig, rows: list[ReportRow],
                    outdir: Path) -> list[Path]:
    files = []
    opset = build_model(config.model)
    files.append(plots.spectrum_figure(
        opset.spectral.eigenvalues, outdir / "spectrum.png",
        title=f"{config.model.L1}x{config.model.L2}, flux "
              f"{config.model.flux_p}/{config.model.flux_q}"))
    sweep_rows = [r for r in rows if r.route == "adiabatic" and r.eps is not None
                  and r.sigma is not None]
    if sweep_rows:
        eps_grid = sorted({r.eps for r in sweep_rows}, reverse=True)
        sweep = []
        for e in eps_grid:
            m = np.zeros((2, 2))
            for r in sweep_rows:
                if r.eps == e:
                    m[r.k - 1, r.j - 1] = r.sigma
            sweep.append(m)
        limit_rows = [r for r in rows if r.route == "adiabatic" and r.eps is None
                      and r.sigma is not None]
        limit = None
        if limit_rows:
            limit = np.zeros((2, 2))
            for r in limit_rows:
                limit[r.k - 1, r.j - 1] = r.sigma
        files.append(plots.sweep_figure(eps_grid, sweep, limit,
                                        outdir / "adiabatic_sweep.png"))
    routes = sorted({r.route for r in rows if r.sigma is not None})
    if len(routes) > 1:
        values = {}
        for r in rows:
            if r.sigma is not None and (r.k, r.j) == (1, 2):
                values.setdefault(r.route, r.sigma)
        if len(values) > 1:
            names = sorted(values)
            mat = np.array([[abs(values[a] - values[b]) for b in names]
                            for a in names])
            files.append(plots.route_agreement_figure(
                names, mat, outdir / "route_agreement.png"))
    return files
