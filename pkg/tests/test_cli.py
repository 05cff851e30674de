import os

import pytest

from twoscale_ldp import cli
from twoscale_ldp.errors import ConfigError


def _run(tmp_path, *args, config=None):
    argv = list(args) + ["--out", str(tmp_path / "out")]
    if config is not None:
        tmp_path.mkdir(parents=True, exist_ok=True)
        path = tmp_path / "cfg.toml"
        path.write_text(config)
        argv += ["--config", str(path)]
    return cli.main(argv)


def _read(tmp_path, name):
    return (tmp_path / "out" / name).read_text()


def _body(text):
    return [line for line in text.splitlines() if not line.startswith("#")]


def test_parse_config_defaults_and_echo():
    values = cli.parse_config({"bns": {"b": 2}})
    assert values["bns"]["b"] == 2.0 and values["bns"]["a"] == 1.0
    rc = cli.RunConfig("rate", values, "out")
    assert "bns.b=2" in rc.echo() and "seed=20240917" in rc.echo()


@pytest.mark.parametrize("raw, fragment", [
    ({"bns": {"b": -1}}, "bns.b=-1 violates: b > 0"),
    ({"bns": {"bb": 1}}, "unknown key bns.bb"),
    ({"nope": {"x": 1}}, "unknown section"),
    ({"seed": "x"}, "seed: expected an integer"),
    ({"hamiltonian": {"p_min": 1.0, "p_max": 0.0}}, "p_min must be below"),
    ({"custom": {"b": [[0, 1]]}}, "expected a list of 3-element"),
])
def test_parse_config_rejections(raw, fragment):
    with pytest.raises(ConfigError, match=fragment):
        cli.parse_config(raw)


def test_verify_preset_expands():
    values = cli.parse_config({"verify": {"preset": "acceptance", "tol_scale": 0.0}})
    assert values["verify"]["checks"] == list(range(1, 11))
    assert values["verify"]["tol_scale"] == 1.0


def test_hamiltonian_csv_schema(tmp_path):
    assert _run(tmp_path, "hamiltonian") == cli.EXIT_OK
    text = _read(tmp_path, "hamiltonian.csv")
    body = _body(text)
    assert body[0] == "x,p,value,backend"
    assert len(body) == 1 + 21
    assert "# seed=20240917" in text
    assert not (tmp_path / "out" / "hamiltonian.svg").exists()


def test_dump_generator(tmp_path):
    cfg = 'scenario = "gene"\n[hamiltonian]\nbackend = "matrix"\nx = [1.0]\n'
    assert _run(tmp_path, "hamiltonian", "--dump-generator", config=cfg) == 0
    body = _body(_read(tmp_path, "generator.csv"))
    assert body[0] == "i,j,y_i,y_j,rate"
    assert len(body) == 1 + 4


def test_rate_tables(tmp_path):
    assert _run(tmp_path, "rate", "--svg") == 0
    assert _body(_read(tmp_path, "rate_lbar.csv"))[0] == "q,Lbar,Lbar_closed_form"
    assert _body(_read(tmp_path, "rate_I.csv"))[0] == "x,I"
    svg = _read(tmp_path, "rate_I.svg")
    assert svg.startswith("<svg") and "<polyline" in svg


def test_rate_needs_x_free_scenario(tmp_path):
    assert _run(tmp_path, "rate", config='scenario = "gene"\n') == cli.EXIT_CONFIG


def test_hjb_outputs(tmp_path):
    cfg = "[hjb]\nxmin = -2.0\nxmax = 2.0\ndx = 0.02\nt = 0.2\n"
    assert _run(tmp_path, "hjb", config=cfg) == 0
    body = _body(_read(tmp_path, "hjb.csv"))
    assert body[0] == "x,h0,u,hopf_lax"
    assert len(body) == 1 + 201
    assert "clamps,0" in _body(_read(tmp_path, "hjb_info.csv"))


def test_simulate_byte_identical_and_worker_independent(tmp_path):
    cfg = "[mc]\nepsilons = [0.2]\nn_paths = 3000\n"
    assert _run(tmp_path / "a", "simulate", config=cfg) == 0
    assert _run(tmp_path / "b", "simulate", "--workers", "3", config=cfg) == 0
    for name in ("u_eps.csv", "tail.csv"):
        assert _read(tmp_path / "a", name) == _read(tmp_path / "b", name)
    assert _body(_read(tmp_path / "a", "u_eps.csv"))[0] == "epsilon,u_hat,stderr,n_paths,dt,y0"
    assert (_body(_read(tmp_path / "a", "tail.csv"))[0]
            == "epsilon,threshold,log_prob_scaled,n_hits")


def test_seed_changes_output(tmp_path):
    cfg = "[mc]\nepsilons = [0.2]\nn_paths = 2000\n"
    _run(tmp_path / "a", "simulate", "--seed", "1", config=cfg)
    _run(tmp_path / "b", "simulate", "--seed", "2", config=cfg)
    assert _body(_read(tmp_path / "a", "u_eps.csv")) != _body(_read(tmp_path / "b", "u_eps.csv"))


def test_scenarios(tmp_path):
    assert _run(tmp_path, "scenario", "bns", "--b", "2") == 0
    assert "# bns.b=2" in _read(tmp_path, "bns_rate.csv")
    assert _run(tmp_path, "scenario", "gene") == 0
    assert _body(_read(tmp_path, "gene_pdmp.csv"))[0] == "x,p,H_diffusion,H_pdmp,H_printed"


def test_custom_model(tmp_path):
    cfg = ('scenario = "custom"\n[custom]\nsigma = [[0, 0, 1.0]]\n'
           '[grid]\nymin = -6.0\nymax = 6.0\nn = 121\n'
           '[hamiltonian]\nbackend = "matrix"\nx = [0.0]\np_min = 0.5\np_max = 1.0\nn_p = 2\n')
    assert _run(tmp_path, "hamiltonian", config=cfg) == 0
    rows = _body(_read(tmp_path, "hamiltonian.csv"))[1:]
    assert [float(r.split(",")[2]) for r in rows] == pytest.approx([0.125, 0.5], abs=1e-9)


def test_exit_code_config_error(tmp_path):
    assert _run(tmp_path, "rate", config="[bns]\nb = -1.0\n") == cli.EXIT_CONFIG
    assert _run(tmp_path, "rate", config="not toml [") == cli.EXIT_CONFIG
    assert cli.main(["rate", "--config", str(tmp_path / "missing.toml")]) == cli.EXIT_CONFIG
    assert cli.main(["bogus"]) == cli.EXIT_CONFIG


def test_exit_code_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["rate", "--out", str(blocker / "sub")]) == cli.EXIT_CONFIG


def test_exit_code_numeric_failure(tmp_path):
    # a jump atom of size 800 overflows the exponential moment
    cfg = ('scenario = "custom"\n[custom]\nnu1_atoms = [[800.0, 1.0]]\n'
           '[grid]\nymin = -4.0\nymax = 4.0\nn = 41\n'
           '[hjb]\nxmin = -1.0\nxmax = 1.0\ndx = 0.1\nt = 0.1\n'
           '[hamiltonian]\nbackend = "matrix"\n')
    assert _run(tmp_path, "hjb", config=cfg) == cli.EXIT_NUMERIC


def test_verify_pass_fail_and_report(tmp_path, capsys):
    assert _run(tmp_path / "a", "verify", "--check", "1") == cli.EXIT_OK
    assert _read(tmp_path / "a", "verify_report.txt").startswith("[PASS] check 1")
    cfg = "[verify]\ntol_scale = 0.0\n"
    assert _run(tmp_path / "b", "verify", "--check", "legendre-duality",
                config=cfg) == cli.EXIT_FAIL
    report = _read(tmp_path / "b", "verify_report.txt")
    assert report.startswith("[FAIL] check 5 legendre-duality")
    assert os.path.exists(tmp_path / "b" / "out" / "check05_measurements.csv")
    assert "0/1 checks passed" in capsys.readouterr().out
    assert _run(tmp_path / "c", "verify", "--check", "99") == cli.EXIT_CONFIG


def test_verify_output_deterministic(tmp_path):
    _run(tmp_path / "a", "verify", "--check", "2")
    _run(tmp_path / "b", "verify", "--check", "2")
    for name in ("verify_report.txt", "check02_measurements.csv"):
        assert _read(tmp_path / "a", name) == _read(tmp_path / "b", name)
