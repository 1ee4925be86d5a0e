import json
import math

import pytest

from levydam.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_VERIFY,
    ConfigError,
    build_model,
    build_policy,
    cmd_evaluate,
    cmd_optimize,
    cmd_verify,
    load_config,
    main,
)


def wiener_config(out_dir, **extra):
    cfg = {
        "schema_version": 1,
        "model": {"kind": "brownian", "mu": 1.0, "sigma2": 1.0},
        "reflected": False,
        "policy": {"lambda": 2.0, "tau": 0.0, "M": 2.0, "V": 4.0},
        "costs": {
            "K1": 0.5, "K2": 0.25, "R": 0.1,
            "g": {"breakpoints": [0.0, 2.0], "coeffs": [[0.1]]},
            "g_star": {"breakpoints": [0.0, 4.0], "coeffs": [[0.05]]},
        },
        "alphas": [0.5],
        "verification": {"n_paths": 3000, "seed": 3, "tolerance_se": 3.0,
                         "time_step": 0.002},
        "output": {"dir": str(out_dir)},
    }
    cfg.update(extra)
    return cfg


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


class TestConfigValidation:
    def test_bad_json_reports_line(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "schema_version": 1,\n  "model": oops\n}')
        with pytest.raises(ConfigError, match=r":3:"):
            load_config(str(path))

    def test_schema_version_required(self, tmp_path):
        path = write_config(tmp_path, {"model": {}})
        with pytest.raises(ConfigError, match="schema_version"):
            load_config(path)

    def test_missing_key_path_in_message(self):
        with pytest.raises(ConfigError, match=r"model\.sigma2"):
            build_model({"kind": "brownian", "mu": 1.0})

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="unknown model kind"):
            build_model({"kind": "stable", "mu": 1.0})

    def test_policy_inequality_enforced(self):
        with pytest.raises(ConfigError, match="tau < lam"):
            build_policy({"lambda": 1.0, "tau": 1.5, "M": 1.0, "V": 4.0})

    def test_infinite_capacity_spelling(self):
        pol = build_policy({"lambda": 1.0, "tau": 0.5, "M": 1.0, "V": "inf"})
        assert math.isinf(pol.V)

    def test_main_reports_config_error(self, tmp_path, capsys):
        path = write_config(tmp_path, {"schema_version": 2})
        assert main(["evaluate", "--config", path]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err


class TestEvaluate:
    def test_wiener_exit_mean_field(self, tmp_path):
        report = cmd_evaluate(wiener_config(tmp_path))
        # lambda / mu for Wiener input started at tau = 0
        assert report["quantities"]["fill_exit_mean"] == pytest.approx(2.0,
                                                                       rel=1e-10)
        assert "0.5" in report["quantities"]["per_alpha"]
        over = report["quantities"]["overshoot"]
        # continuous input crosses by creeping: the law is the unit atom
        assert over["atom_mass_at_threshold"] == pytest.approx(1.0, abs=1e-9)
        assert over["jump_crossing_mass"] == 0.0

    def test_overshoot_summary_for_jump_input(self, tmp_path):
        cfg = wiener_config(tmp_path)
        cfg["model"] = {"kind": "compound_poisson", "zeta": 2.0, "rate": 1.0,
                        "jump_mean": 1.0}
        cfg["reflected"] = True
        cfg["policy"]["tau"] = 0.5
        report = cmd_evaluate(cfg)
        over = report["quantities"]["overshoot"]
        assert over["jump_crossing_mass"] == pytest.approx(1.0, abs=1e-6)
        # exponential jumps are memoryless: mean overshoot is the jump mean
        assert over["mean_overshoot_given_jump"] == pytest.approx(1.0,
                                                                  abs=1e-6)

    def test_zero_costs_give_zero_fields(self, tmp_path):
        cfg = wiener_config(tmp_path)
        cfg["costs"].update(K1=0.0, K2=0.0, R=0.0)
        cfg["costs"]["g"]["coeffs"] = [[0.0]]
        cfg["costs"]["g_star"]["coeffs"] = [[0.0]]
        report = cmd_evaluate(cfg)
        q = report["quantities"]
        assert q["long_run_average_cost"] == pytest.approx(0.0, abs=1e-12)
        assert q["per_alpha"]["0.5"]["cycle_cost"] == pytest.approx(0.0,
                                                                    abs=1e-12)
        assert q["per_alpha"]["0.5"]["total_discounted_cost"] == pytest.approx(
            0.0, abs=1e-12)

    def test_byte_identical_reports(self, tmp_path):
        cfg_path = write_config(tmp_path, wiener_config(tmp_path / "o1"))
        assert main(["evaluate", "--config", cfg_path, "--quiet"]) == EXIT_OK
        cfg_path2 = write_config(tmp_path, wiener_config(tmp_path / "o2"),
                                 name="cfg2.json")
        assert main(["evaluate", "--config", cfg_path2, "--quiet"]) == EXIT_OK
        a = (tmp_path / "o1" / "evaluate.json").read_bytes()
        b = (tmp_path / "o2" / "evaluate.json").read_bytes()
        assert a == b
        a_csv = (tmp_path / "o1" / "evaluate.csv").read_bytes()
        b_csv = (tmp_path / "o2" / "evaluate.csv").read_bytes()
        assert a_csv == b_csv


class TestVerify:
    def test_wiener_passes(self, tmp_path):
        report = cmd_verify(wiener_config(tmp_path))
        assert report["pass"] is True
        assert not report["starved"]
        assert len(report["checks"]) >= 5

    def test_corrupted_analytic_fails(self, tmp_path):
        cfg = wiener_config(tmp_path)
        cfg["verification"]["corrupt"] = {"quantity": "fill_exit_mean",
                                          "factor": 1.5}
        report = cmd_verify(cfg)
        assert report["pass"] is False
        bad = [c for c in report["checks"]
               if c["quantity"] == "fill_exit_mean"][0]
        assert bad["pass"] is False

    def test_exit_code_on_failure(self, tmp_path, capsys):
        cfg = wiener_config(tmp_path)
        cfg["verification"]["corrupt"] = {"quantity": "fill_exit_mean",
                                          "factor": 1.5}
        path = write_config(tmp_path, cfg)
        assert main(["verify", "--config", path, "--quiet"]) == EXIT_VERIFY

    def test_seed_stability_of_outcome(self, tmp_path):
        outcomes = []
        for seed in (11, 12, 13):
            report = cmd_verify(wiener_config(tmp_path), seed=seed)
            outcomes.append(report["pass"])
        assert outcomes == [True, True, True]

    def test_seed_override_changes_estimates(self, tmp_path):
        r1 = cmd_verify(wiener_config(tmp_path), seed=1)
        r2 = cmd_verify(wiener_config(tmp_path), seed=2)
        m1 = r1["checks"][0]["mc_mean"]
        m2 = r2["checks"][0]["mc_mean"]
        assert m1 != m2

    def test_total_discounted_check_opt_in(self, tmp_path):
        cfg = wiener_config(tmp_path)
        cfg["alphas"] = [1.0]
        cfg["verification"].update(n_paths=800, time_step=0.002,
                                   check_total_discounted=True)
        report = cmd_verify(cfg)
        names = [c["quantity"] for c in report["checks"]]
        assert "total_discounted[alpha=1]" in names
        assert report["pass"] is True

    def test_starved_simulation_reported_distinctly(self, tmp_path):
        # plain input with downward drift never reaches the threshold
        cfg = wiener_config(tmp_path)
        cfg["model"] = {"kind": "compound_poisson", "zeta": 2.0, "rate": 1.0,
                        "jump_mean": 1.0}
        cfg["reflected"] = False
        cfg["verification"].update(n_paths=200, horizon=30.0)
        report = cmd_verify(cfg)
        assert report["starved"] is True
        assert report["pass"] is False
        path = write_config(tmp_path, cfg, name="starve.json")
        rc = main(["verify", "--config", path, "--quiet"])
        from levydam.cli import EXIT_NUMERIC
        assert rc == EXIT_NUMERIC


class TestOptimize:
    def sweep_config(self, tmp_path, **kw):
        cfg = wiener_config(tmp_path)
        cfg["reflected"] = True
        cfg["sweep"] = {
            "lambda": {"start": 1.0, "stop": 2.0, "num": 3},
            "tau": {"start": 0.2, "stop": 0.8, "num": 3},
            "refine_rounds": kw.pop("refine_rounds", 0),
        }
        cfg["objective"] = {"criterion": "long_run_average"}
        cfg.update(kw)
        return cfg

    def test_single_point_grid(self, tmp_path):
        cfg = self.sweep_config(tmp_path)
        cfg["sweep"]["lambda"] = 1.5
        cfg["sweep"]["tau"] = 0.5
        report = cmd_optimize(cfg)
        assert report["argmin"]["lambda"] == 1.5
        assert report["argmin"]["tau"] == 0.5

    def test_infeasible_grid_rejected(self, tmp_path):
        cfg = self.sweep_config(tmp_path)
        cfg["sweep"]["lambda"] = 0.5
        cfg["sweep"]["tau"] = 0.9
        with pytest.raises(ConfigError, match="no grid point"):
            cmd_optimize(cfg)

    def test_constant_objective_tie_break(self, tmp_path, monkeypatch):
        cfg = self.sweep_config(tmp_path)
        import levydam.cli as cli

        def constant(cfg_, model, costs, reflected):
            return (lambda policy: 7.0), "constant"

        monkeypatch.setattr(cli, "_objective_fn", constant)
        report = cmd_optimize(cfg)
        # lexicographically first feasible point
        assert report["argmin"]["lambda"] == 1.0
        assert report["argmin"]["tau"] == 0.2

    def test_refinement_stays_near_coarse_argmin(self, tmp_path):
        coarse = cmd_optimize(self.sweep_config(tmp_path, refine_rounds=0))
        fine = cmd_optimize(self.sweep_config(tmp_path, refine_rounds=2))
        assert abs(fine["argmin"]["lambda"] - coarse["argmin"]["lambda"]) <= 0.5
        assert abs(fine["argmin"]["tau"] - coarse["argmin"]["tau"]) <= 0.3
        assert fine["argmin"]["objective"] <= coarse["argmin"]["objective"] + 1e-12
