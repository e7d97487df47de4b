import json
import os
import subprocess
import sys
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risgeo import cli
from risgeo.config import DEFAULTS, EXIT_CONFIG, EXIT_USER_DENSITY, ConfigError, load_config, parse_override
from risgeo.outputs import format_csv, read_csv, write_csv

FAST = ["--set", "n_bs_antennas=4", "--set", "n_ue_antennas=2", "--set", "ris_elements=16",
        "--set", "n_users=4", "--trials", "4"]


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------


def test_defaults_build():
    rc = load_config()
    assert rc.system.n_bs_antennas == DEFAULTS["system"]["n_bs_antennas"]
    assert rc.experiment.n_trials == 200
    assert rc.analytics.tol == 1e-8


def test_override_forms():
    rc = load_config(None, ["ris_density=5.5e-3", "system.n_users=30", "thresholds_db=[0, 10]",
                            "deployment_model=pcp", "pcp_scatter_std=none"])
    assert rc.experiment.ris_density == 5.5e-3
    assert rc.analytics.ris_density == 5.5e-3
    assert rc.system.n_users == 30
    assert rc.experiment.thresholds_db == (0.0, 10.0)
    assert rc.experiment.deployment_model == "pcp"
    assert rc.experiment.pcp_scatter_std is None


def test_parse_override_literals():
    assert parse_override("a=3") == ("a", 3)
    assert parse_override("a = 2.5") == ("a", 2.5)
    assert parse_override("a=true") == ("a", True)
    assert parse_override("a=ppp") == ("a", "ppp")
    with pytest.raises(ConfigError):
        parse_override("novalue")


def test_file_then_overrides(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text("[deployment]\nris_density = 2e-3\n\n[sweep]\nn_trials = 9\n")
    rc = load_config(str(p), ["n_trials=11"])
    assert rc.experiment.ris_density == 2e-3
    assert rc.experiment.n_trials == 11


def test_unknown_key_reports_line(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[system]\nn_users = 3\n\n[scheme]\nbad_key = 1\n")
    with pytest.raises(ConfigError, match="line 5: unknown configuration key 'scheme.bad_key'") as exc:
        load_config(str(p))
    assert exc.value.exit_code == EXIT_CONFIG


def test_unknown_section_reports_line(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[system]\nn_users = 3\n[extras]\nx = 1\n")
    with pytest.raises(ConfigError, match="line 3: unknown section"):
        load_config(str(p))


def test_bad_values_are_config_errors():
    for item in ("n_trials=0", "deployment_model=grid", "ris_density=-1", "nakagami_m_los=0"):
        with pytest.raises(ConfigError) as exc:
            load_config(None, [item])
        assert exc.value.exit_code == EXIT_CONFIG
    with pytest.raises(ConfigError, match="unknown configuration key"):
        load_config(None, ["warp_factor=9"])


def test_invalid_user_density_exit_code():
    for val in ("0", "-1e-3"):
        with pytest.raises(ConfigError, match="user density") as exc:
            load_config(None, [f"user_density={val}"])
        assert exc.value.exit_code == EXIT_USER_DENSITY


def test_content_hash_tracks_values():
    a, b = load_config(), load_config(None, ["seed=1"])
    assert a.content_hash() == load_config().content_hash()
    assert a.content_hash() != b.content_hash()


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(allow_nan=False, allow_infinity=False, width=64), st.integers(-10 ** 6, 10 ** 6),
                          st.sampled_from(["optimal", "quantized:4", "x"])), max_size=12))
def test_csv_round_trip_is_byte_identical(rows):
    header = ["value", "count", "label"]
    text = format_csv(header, [list(r) for r in rows])
    with tempfile.TemporaryDirectory() as d:
        p = write_csv(os.path.join(d, "a.csv"), header, [list(r) for r in rows])
        h2, rows2 = read_csv(p)
        assert h2 == header
        assert format_csv(h2, rows2) == text


def test_csv_rejects_ragged_rows(tmp_path):
    with pytest.raises(ValueError):
        write_csv(tmp_path / "x.csv", ["a", "b"], [[1]])


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def test_simulate_writes_outputs_and_manifest(tmp_path):
    out = tmp_path / "sim"
    assert cli.main(["simulate", *FAST, "--out", str(out)]) == 0
    for name in ("coverage.csv", "rate.csv", "rate_summary.csv", "manifest.json"):
        assert (out / name).exists()
    header, rows = read_csv(out / "coverage.csv")
    assert header == ["threshold_db", "coverage", "ci"]
    cov = [r[1] for r in rows]
    assert np.all(np.diff(cov) <= 0)
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "simulate"
    assert man["config"]["sweep"]["n_trials"] == 4
    assert {o["file"] for o in man["outputs"]} == {"coverage.csv", "rate.csv", "rate_summary.csv"}


def test_manifest_replay_and_threads_reproduce_bytes(tmp_path):
    first = tmp_path / "a"
    assert cli.main(["simulate", *FAST, "--set", "sweep_param=ris_density", "--set", "sweep_values=[1e-4, 3e-3]",
                     "--out", str(first)]) == 0
    replay = tmp_path / "b"
    assert cli.main(["simulate", "--config", str(first / "manifest.json"), "--threads", "2",
                     "--out", str(replay)]) == 0
    for name in ("coverage.csv", "rate.csv", "rate_summary.csv", "sweep.csv"):
        assert (first / name).read_bytes() == (replay / name).read_bytes()
    a = json.loads((first / "manifest.json").read_text())
    b = json.loads((replay / "manifest.json").read_text())
    assert a["config_hash"] == b["config_hash"]
    assert a["outputs"] == b["outputs"]


def test_analyze_records_quadrature_tolerance(tmp_path):
    out = tmp_path / "an"
    args = ["analyze", "--set", "n_bs_antennas=1", "--set", "n_ue_antennas=1", "--set", "quad_tol=1e-7",
            "--set", "thresholds_db=[0, 10]", "--set", "sweep_param=ris_density", "--set", "sweep_values=[6e-4]",
            "--out", str(out)]
    assert cli.main(args) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["extra"]["quad_tol"] == 1e-7
    _, cov = read_csv(out / "analytic_coverage.csv")
    assert cov[0][1] >= cov[1][1]
    header, _ = read_csv(out / "analytic_density_sweep.csv")
    assert header == ["ris_density", "coverage_T0dB", "coverage_T10dB"]


def test_compare_writes_pvalues(tmp_path):
    out = tmp_path / "cmp"
    assert cli.main(["compare", *FAST, "--schemes", "optimal,random", "--out", str(out)]) == 0
    header, rows = read_csv(out / "compare_pvalues.csv")
    assert header == ["better", "worse", "mean_diff_bps", "p_ttest", "p_wilcoxon"]
    assert rows[0][:2] == ["optimal", "random"]
    assert 0 <= rows[0][3] <= 1 and 0 <= rows[0][4] <= 1


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["simulate", "--set", "warp=1", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "unknown configuration key" in capsys.readouterr().err
    assert cli.main(["analyze", "--set", "user_density=0", "--out", str(tmp_path)]) == EXIT_USER_DENSITY
    assert "user density" in capsys.readouterr().err
    bad = tmp_path / "bad.toml"
    bad.write_text("[sweep]\nn_trials = 3\nfoo = 2\n")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "line 3" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.toml"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_figure_listing_and_unknown_recipe(capsys):
    assert cli.main(["figure"]) == 0
    listing = capsys.readouterr().out
    for name in cli.RECIPES:
        assert name in listing
    assert cli.main(["figure", "fig99"]) == EXIT_CONFIG
    assert "unknown recipe" in capsys.readouterr().err


def test_figure_recipe_runs(tmp_path):
    out = tmp_path / "f9"
    assert cli.main(["figure", "fig9", *FAST[:-2], "--trials", "2", "--out", str(out)]) == 0
    header, rows = read_csv(out / "fig9_coverage_vs_density.csv")
    assert header[0] == "ris_density" and len(rows) == 5
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "figure fig9"


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "risgeo", "figure"], capture_output=True, text=True, timeout=120)
    assert res.returncode == 0
    assert "fig10" in res.stdout
