"""Command-line entry points: run, selftest, spectrum, butterfly."""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import plots
from .config import butterfly_options, load_config
from .errors import ConfigError, LatKuboError
from .lattice import BlochFamily, build_model
from .reports import write_json
from .runner import run_experiment
from .selftest import format_report, run_selftest


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.no_figures:
        object.__setattr__(config, "figures", False)
    result = run_experiment(config)
    for f in result.files:
        print(f"wrote {f}")
    if result.summary["errors"]:
        print(f"{result.summary['errors']} of {result.summary['rows']} rows "
              "carry error entries", file=sys.stderr)
    return result.exit_status


def _cmd_selftest(args) -> int:
    level = "full" if args.full else "quick"
    results = run_selftest(level)
    print(format_report(results))
    return 0 if all(r.passed for r in results) else 1


def _cmd_spectrum(args) -> int:
    config = load_config(args.config)
    opset = build_model(config.model)
    evals = opset.spectral.eigenvalues
    outdir = config.directory
    outdir.mkdir(parents=True, exist_ok=True)
    ev_path = outdir / "eigenvalues.csv"
    with open(ev_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("index,energy\n")
        for i, e in enumerate(evals):
            fh.write(f"{i},{e!r}\n")
    bins = max(24, len(evals) // 8)
    hist, edges = np.histogram(evals, bins=bins)
    dos_path = outdir / "dos.csv"
    with open(dos_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("energy,states_per_site\n")
        width = edges[1] - edges[0]
        for count, lo in zip(hist, edges[:-1]):
            fh.write(f"{(lo + width / 2)!r},{count / len(evals)!r}\n")
    print(f"wrote {ev_path}")
    print(f"wrote {dos_path}")
    if config.figures:
        fig = plots.spectrum_figure(
            evals, outdir / "spectrum.png",
            title=f"{config.model.L1}x{config.model.L2} flux "
                  f"{config.model.flux_p}/{config.model.flux_q} "
                  f"W={config.model.disorder_W}")
        print(f"wrote {fig}")
    return 0


def _reduced_fractions(qmax: int):
    for q in range(1, qmax + 1):
        for p in range(0, q + 1):
            if math.gcd(p, q) == 1 or (p == 0 and q == 1):
                yield p, q


def _cmd_butterfly(args) -> int:
    config = load_config(args.config)
    opts = butterfly_options(args.config)
    qmax, grid = opts["qmax"], opts["grid"]
    outdir = config.directory
    outdir.mkdir(parents=True, exist_ok=True)
    flux_col, energy_col = [], []
    rows_path = outdir / "butterfly.csv"
    with open(rows_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("flux_p,flux_q,flux,energy\n")
        for p, q in _reduced_fractions(qmax):
            bloch = BlochFamily(p, q, q, q)
            n1 = max(1, grid // q)
            k1s = 2 * math.pi / q * np.arange(n1) / n1
            k2s = 2 * math.pi * np.arange(grid) / grid
            for k1 in k1s:
                for k2 in k2s:
                    for e in np.linalg.eigvalsh(bloch.fiber(k1, k2)):
                        fh.write(f"{p},{q},{p / q!r},{e!r}\n")
                        flux_col.append(p / q)
                        energy_col.append(e)
    print(f"wrote {rows_path}")
    if config.figures:
        fig = plots.butterfly_figure(np.array(flux_col), np.array(energy_col),
                                     outdir / "butterfly.png")
        print(f"wrote {fig}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="latkubo",
        description="Linear response on finite magnetic lattices: Kubo, "
                    "Kubo-Streda and adiabatic conductivities.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured sweep")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")
    p_run.set_defaults(fn=_cmd_run)

    p_self = sub.add_parser("selftest", help="run the invariant checks")
    p_self.add_argument("--full", action="store_true",
                        help="include the heavy route-equivalence oracles")
    p_self.set_defaults(fn=_cmd_selftest)

    p_spec = sub.add_parser("spectrum", help="eigenvalues and density of states")
    p_spec.add_argument("config", type=Path)
    p_spec.set_defaults(fn=_cmd_spectrum)

    p_fly = sub.add_parser("butterfly", help="flux-sweep spectrum dataset")
    p_fly.add_argument("config", type=Path)
    p_fly.set_defaults(fn=_cmd_butterfly)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except LatKuboError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
