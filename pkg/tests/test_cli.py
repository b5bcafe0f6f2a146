import json
import math

import numpy as np
import pytest

from latkubo.cli import main
from latkubo.config import DEFAULTS, load_config, parse_config
from latkubo.errors import ConfigError
from latkubo.reports import CSV_COLUMNS, ReportRow, read_json, write_csv, write_json
from latkubo.runner import run_experiment
from latkubo.selftest import CHECKS, run_selftest

MINIMAL = """
[model]
L1 = 4
L2 = 4
flux_p = 0
flux_q = 1

[state]
E_F = -1.0

[run]
routes = ["streda"]

[output]
directory = "{out}"
figures = false
"""

GAP_THIRD = """
[model]
L1 = 12
L2 = 12
flux_p = 1
flux_q = 3

[state]
E_F = -1.36

[run]
routes = ["streda"]

[output]
directory = "{out}"
figures = {figures}
"""


def write_config(tmp_path, text, **fmt):
    path = tmp_path / "config.toml"
    path.write_text(text.format(out=tmp_path / "out", **fmt))
    return path


class TestConfig:
    def test_defaults_parse(self):
        cfg = parse_config({})
        assert cfg.model.L1 == DEFAULTS["model"]["L1"]
        assert cfg.routes == ("streda",)

    def test_unknown_key_is_hard_error(self):
        with pytest.raises(ConfigError, match="run.dtt"):
            parse_config({"run": {"dtt": 1e-3}})

    def test_unknown_tolerance_key(self):
        with pytest.raises(ConfigError, match="tolerances"):
            parse_config({"run": {"tolerances": {"routee": 1.0}}})

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="outputs"):
            parse_config({"outputs": {}})

    def test_flux_commensurability_named(self):
        with pytest.raises(ConfigError, match="flux_q=5"):
            parse_config({"model": {"flux_q": 5, "flux_p": 1}})

    def test_unknown_route(self):
        with pytest.raises(ConfigError, match="teleport"):
            parse_config({"run": {"routes": ["teleport"]}})

    def test_load_from_file(self, tmp_path):
        cfg = load_config(write_config(tmp_path, MINIMAL))
        assert cfg.model.flux_q == 1
        assert not cfg.figures


class TestExport:
    def test_empty_report_header_only(self, tmp_path):
        path = write_csv(tmp_path / "empty.csv", [])
        assert path.read_text() == ",".join(CSV_COLUMNS) + "\n"

    def test_column_order_stable(self, tmp_path):
        rows = [ReportRow(route="streda", k=1, j=2, sigma=0.125)]
        text = write_csv(tmp_path / "r.csv", rows).read_text()
        header, line = text.strip().split("\n")
        assert header.split(",") == CSV_COLUMNS
        cells = line.split(",")
        assert cells[0] == "streda"
        assert cells[CSV_COLUMNS.index("sigma")] == repr(0.125)
        assert cells[CSV_COLUMNS.index("sigma_rescaled_2pi")] == repr(2 * math.pi * 0.125)

    def test_json_roundtrip_bit_exact(self, tmp_path):
        vals = [0.1 + 0.2, 1 / 3, math.pi, 2.0**-52, 1e308]
        write_json(tmp_path / "s.json", {"values": vals})
        back = read_json(tmp_path / "s.json")
        assert back["values"] == vals
        assert back["schema_version"] == 1


class TestRunExperiment:
    def test_minimal_flux_zero_hall_vanishes(self, tmp_path):
        cfg = load_config(write_config(tmp_path, MINIMAL))
        result = run_experiment(cfg)
        hall = [r for r in result.rows if (r.k, r.j) == (1, 2)]
        assert len(hall) == 1 and abs(hall[0].sigma) <= 1e-14
        assert (tmp_path / "out" / "conductivity.csv").exists()
        assert (tmp_path / "out" / "summary.json").exists()

    def test_gap_state_quantized(self, tmp_path):
        cfg = load_config(write_config(tmp_path, GAP_THIRD, figures="false"))
        result = run_experiment(cfg)
        hall = [r for r in result.rows if (r.k, r.j) == (1, 2)][0]
        assert abs(hall.sigma_rescaled_2pi - 1.0) <= 0.05
        summary = read_json(tmp_path / "out" / "summary.json")
        assert summary["chern_reference"] == {"band_count": 1, "12": 1, "21": -1}

    def test_determinism_modulo_wall_ms(self, tmp_path):
        cfg = load_config(write_config(tmp_path, GAP_THIRD, figures="false"))

        def stripped():
            rows = (tmp_path / "out" / "conductivity.csv").read_text().splitlines()
            drop = CSV_COLUMNS.index("wall_ms")
            return ["," .join(c for i, c in enumerate(r.split(",")) if i != drop)
                    for r in rows]

        run_experiment(cfg)
        first = stripped()
        run_experiment(cfg)
        assert stripped() == first

    def test_route_errors_do_not_abort(self, tmp_path):
        # adiabatic on a clean torus obstructs on longitudinal entries;
        # the sweep must still produce rows with error annotations
        text = GAP_THIRD.replace('routes = ["streda"]',
                                 'routes = ["adiabatic", "streda"]')
        cfg = load_config(write_config(tmp_path, text, figures="false"))
        result = run_experiment(cfg)
        streda = [r for r in result.rows if r.route == "streda" and r.sigma is not None]
        errors = [r for r in result.rows if r.error]
        assert streda and errors
        assert result.exit_status == 0

    def test_figures_rendered(self, tmp_path):
        cfg = load_config(write_config(tmp_path, GAP_THIRD, figures="true"))
        result = run_experiment(cfg)
        assert (tmp_path / "out" / "spectrum.png").exists()

    def test_worker_pool_preserves_order(self, tmp_path):
        text = GAP_THIRD.replace("[run]\nroutes",
                                 "[run]\nensemble_n = 3\nworkers = 3\nroutes")
        cfg = load_config(write_config(tmp_path, text, figures="false"))
        parallel = [(r.route, r.seed, r.k, r.j, r.sigma)
                    for r in run_experiment(cfg).rows]
        serial_cfg = load_config(write_config(
            tmp_path, text.replace("workers = 3", "workers = 1"),
            figures="false"))
        serial = [(r.route, r.seed, r.k, r.j, r.sigma)
                  for r in run_experiment(serial_cfg).rows]
        assert parallel == serial


class TestCliCommands:
    def test_run_command(self, tmp_path, capsys):
        code = main(["run", str(write_config(tmp_path, MINIMAL))])
        assert code == 0
        assert "conductivity.csv" in capsys.readouterr().out

    def test_config_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[model]\nflux_q = 5\nflux_p = 1\n")
        assert main(["run", str(bad)]) == 2
        assert "flux" in capsys.readouterr().err

    def test_spectrum_command(self, tmp_path, capsys):
        code = main(["spectrum", str(write_config(tmp_path, MINIMAL))])
        assert code == 0
        ev = (tmp_path / "out" / "eigenvalues.csv").read_text().splitlines()
        assert ev[0] == "index,energy"
        assert len(ev) == 17
        assert (tmp_path / "out" / "dos.csv").exists()

    def test_butterfly_command(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text(MINIMAL.format(out=tmp_path / "out")
                        + "\n[butterfly]\nqmax = 5\ngrid = 6\n")
        assert main(["butterfly", str(path)]) == 0
        rows = (tmp_path / "out" / "butterfly.csv").read_text().splitlines()
        assert rows[0] == "flux_p,flux_q,flux,energy"
        fluxes = {tuple(r.split(",")[:2]) for r in rows[1:]}
        assert ("1", "2") in fluxes and ("2", "5") in fluxes

    def test_butterfly_figure(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text(
            MINIMAL.format(out=tmp_path / "out").replace("figures = false",
                                                         "figures = true")
            + "\n[butterfly]\nqmax = 4\ngrid = 6\n")
        assert main(["butterfly", str(path)]) == 0
        assert (tmp_path / "out" / "butterfly.png").exists()


class TestSelftest:
    def test_quick_tier_all_pass(self):
        results = run_selftest("quick")
        failed = [r.name for r in results if not r.passed]
        assert not failed, f"failed checks: {failed}"

    def test_check_names_are_stable(self):
        names = {n for n, _, _ in CHECKS}
        expected = {
            "ncalg.resolvent_laplace_identity",
            "ncalg.lp_identity_suite",
            "lattice.magnetic_commutation",
            "dynamics.isospectrality",
            "response.equilibrium_no_current",
            "ensemble.covariance_exactness",
        }
        assert expected <= names

    def test_tampered_liouvillian_sign_fails_by_name(self, monkeypatch):
        """Mutation canary: flipping the resolvent orientation must fail the
        named Laplace-identity check."""
        import latkubo.selftest as st
        from latkubo.operators import Operator

        def tampered(S, eps, kappa, A):
            At = S.to_eigenbasis(A.entries)
            return Operator(S.from_eigenbasis(At / (eps + 1j * kappa - 1j * S.bohr)))

        monkeypatch.setattr(st, "liouvillian_resolvent", tampered)
        results = {r.name: r for r in st.run_selftest("quick")}
        assert not results["ncalg.resolvent_laplace_identity"].passed

    def test_cli_exit_code(self, capsys):
        assert main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "checks passed" in out
