import subprocess
import sys

from branchimm import cli, ctmc, reporting


def write_config(tmp_path, text, name="config.yaml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


BASE = """
rates: {beta: 1.0, mu: 2.0, k: 1.0}
simulation:
  seed: 11
  replicas: 300
  grid: [5.0, 20.0]
"""



def first_data_line(path):
    for line in path.read_text().splitlines():
        if not line.startswith("#"):
            return line
    raise AssertionError("no data lines")

def run_cli(args):
    return cli.main(args)


def test_classify_stdout_and_exit(tmp_path, capsys):
    cfg = write_config(tmp_path, BASE)
    code = run_cli(["classify", cfg, "--out", str(tmp_path / "o")])
    out = capsys.readouterr().out
    assert code == 0
    assert "Ergodic" in out.splitlines()[0]


def test_malformed_kernel_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, """
rates: {beta: 1.0, mu: 2.0, k: 1.0}
kernel:
  dim: 1
  support:
    - {offset: [1], weight: 0.5}
    - {offset: [-1], weight: 0.4}
simulation: {seed: 1, grid: [1.0]}
""")
    code = run_cli(["fourier-cov", cfg, "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 2
    assert "kernel" in err


def test_missing_config_exits_2(tmp_path, capsys):
    code = run_cli(["classify", str(tmp_path / "nope.yaml")])
    assert code == 2


def test_unknown_section_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, BASE + "\nwhatever: 3\n")
    assert run_cli(["classify", cfg]) == 2


def test_moments_check_gate(tmp_path, capsys):
    cfg = write_config(tmp_path, BASE)
    assert run_cli(["moments", cfg, "--check", "--out", str(tmp_path / "a")]) == 0
    # deliberately wrong-by-10% oracle must trip the gate
    biased = write_config(tmp_path, BASE + "  oracle_bias: 1.1\n", name="b.yaml")
    assert run_cli(["moments", biased, "--check",
                    "--out", str(tmp_path / "b")]) == 1


def test_simulate_reproducible_bodies(tmp_path):
    cfg = write_config(tmp_path, BASE)
    for sub in ("r1", "r2"):
        assert run_cli(["simulate", cfg, "--out", str(tmp_path / sub)]) == 0
    b1 = reporting.csv_body(tmp_path / "r1" / "simulate.csv")
    b2 = reporting.csv_body(tmp_path / "r2" / "simulate.csv")
    assert b1 == b2


def test_simulate_jobs_do_not_change_bodies(tmp_path):
    cfg = write_config(tmp_path, BASE)
    assert run_cli(["simulate", cfg, "--out", str(tmp_path / "j1")]) == 0
    assert run_cli(["simulate", cfg, "--jobs", "3",
                    "--out", str(tmp_path / "j3")]) == 0
    assert reporting.csv_body(tmp_path / "j1" / "simulate.csv") == \
        reporting.csv_body(tmp_path / "j3" / "simulate.csv")


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path, BASE)
    assert run_cli(["simulate", cfg, "--seed", "99",
                    "--out", str(tmp_path / "s")]) == 0
    header = (tmp_path / "s" / "simulate.csv").read_text().splitlines()[2]
    assert header == "# master_seed: 99"


def test_env_var_overrides_config(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, BASE)
    monkeypatch.setenv("BRANCHIMM_SEED", "123")
    assert run_cli(["simulate", cfg, "--out", str(tmp_path / "e")]) == 0
    header = (tmp_path / "e" / "simulate.csv").read_text().splitlines()[2]
    assert header == "# master_seed: 123"


def test_event_log_written_and_well_formed(tmp_path):
    cfg = write_config(tmp_path, """
rates: {beta: 1.0, mu: 2.0, k: 3.0}
simulation: {seed: 5, replicas: 2, grid: [3.0]}
""")
    assert run_cli(["simulate", cfg, "--event-log",
                    "--out", str(tmp_path / "ev")]) == 0
    files = sorted((tmp_path / "ev" / "events").glob("*.tsv"))
    assert len(files) == 2
    for line in files[0].read_text().splitlines():
        t, site, kind, target = line.split("\t")
        float(t)
        int(site)
        int(target)
        assert kind in {"B", "D", "J"}


def test_overflow_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(ctmc, "POPULATION_CAP", 200)
    cfg = write_config(tmp_path, """
rates: {beta: 5.0, mu: 0.1, k: 2.0}
simulation: {seed: 1, replicas: 1, grid: [40.0], n0: 10}
""")
    assert run_cli(["simulate", cfg, "--out", str(tmp_path / "ov")]) == 3


def test_invariant_outputs(tmp_path):
    cfg = write_config(tmp_path, BASE)
    assert run_cli(["invariant", cfg, "--out", str(tmp_path / "inv")]) == 0
    assert first_data_line(tmp_path / "inv" / "invariant.csv") == "n,pi"
    summary = (tmp_path / "inv" / "invariant_summary.csv").read_text()
    assert "s_tilde_closed_form" in summary


def test_clt_check_output(tmp_path, capsys):
    cfg = write_config(tmp_path, BASE)
    assert run_cli(["clt-check", cfg, "--k-scale", "200",
                    "--out", str(tmp_path / "c"), "--check"]) == 0
    out = capsys.readouterr().out
    assert "max|ratio-1|" in out


def test_clt_command(tmp_path):
    cfg = write_config(tmp_path, BASE)
    assert run_cli(["clt", cfg, "--k-scale", "150", "--t", "3",
                    "--replicas", "400", "--out", str(tmp_path / "clt")]) == 0
    assert first_data_line(tmp_path / "clt" / "clt.csv").startswith("k_scale,")


def test_finite_moments_requires_finite_space(tmp_path, capsys):
    cfg = write_config(tmp_path, BASE)
    assert run_cli(["finite-moments", cfg]) == 2
    good = write_config(tmp_path, """
rates: {beta: 1.0, mu: 2.0, k: 1.0}
space:
  variant: finite
  n_sites: 3
  jump_rates: [[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]
  symmetric: true
simulation: {seed: 1, grid: [5.0, 20.0]}
""", name="fin.yaml")
    assert run_cli(["finite-moments", good, "--out", str(tmp_path / "f")]) == 0
    assert first_data_line(tmp_path / "f" / "finite_moments_steady.csv") == "site,steady_m1"


def test_fourier_cov_outputs(tmp_path):
    cfg = write_config(tmp_path, """
rates: {beta: 1.0, mu: 2.0, k: 1.0}
kernel:
  dim: 1
  support:
    - {offset: [1], weight: 0.5}
    - {offset: [-1], weight: 0.5}
simulation: {seed: 1, grid: [1.0]}
""")
    assert run_cli(["fourier-cov", cfg, "--side", "32",
                    "--out", str(tmp_path / "fc")]) == 0
    assert first_data_line(tmp_path / "fc" / "fourier_cov_spectrum.csv") == \
        "index,theta_0,a_hat,m2_hat"
    assert first_data_line(tmp_path / "fc" / "fourier_cov_lags.csv") == "u_0,m2_tilde"


def test_env_series_command(tmp_path, capsys):
    cfg = write_config(tmp_path, """
environment:
  variant: by_population_level
  beta: {kind: uniform, a: 0.4, b: 0.8}
  mu: {kind: uniform, a: 1.5, b: 2.5}
  k: {kind: constant, a: 1.0}
  c_minus: 0.4
  c_plus: 2.5
simulation: {seed: 2, env_seed: 6, grid: [1.0]}
""")
    assert run_cli(["env-series", cfg, "--environments", "3",
                    "--out", str(tmp_path / "es")]) == 0
    out = capsys.readouterr().out
    assert "Ergodic" in out
    body = [l for l in (tmp_path / "es" / "env_series.csv").read_text().splitlines()
            if not l.startswith("#")]
    assert len(body) == 1 + 3  # column row + 3 environments


def test_env_spectral_command(tmp_path):
    cfg = write_config(tmp_path, """
environment:
  variant: spectral
  generator: [[-1.0, 1.0], [1.0, -1.0]]
  delta: [1.0, 2.0]
  mean_k: 1.0
simulation: {seed: 2, grid: [1.0]}
""")
    assert run_cli(["env-spectral", cfg, "--out", str(tmp_path / "sp")]) == 0
    text = (tmp_path / "sp" / "env_spectral.csv").read_text()
    assert "eigen_sum" in text and "agreement" in text


def test_env_two_state_command(tmp_path, capsys):
    cfg = write_config(tmp_path, """
environment:
  variant: markov_chain
  beta: [1.0, 1.0]
  mu: [2.0, 3.0]
  k: [1.0, 2.0]
  switch_rates: [[0.0, 1.0], [1.0, 0.0]]
simulation: {seed: 3, replicas: 300, grid: [1.0], t: 40.0, n0: 1}
""")
    assert run_cli(["env-two-state", cfg, "--check",
                    "--out", str(tmp_path / "ts")]) == 0
    assert "Ergodic" in capsys.readouterr().out


def test_env_spatial_command(tmp_path):
    cfg = write_config(tmp_path, """
environment:
  variant: spatial_field
  space:
    variant: torus
    side: 8
    dim: 1
    kernel:
      dim: 1
      support:
        - {offset: [1], weight: 0.5}
        - {offset: [-1], weight: 0.5}
  beta: [1, 1, 1, 1, 1, 1, 1, 1]
  mu: [2, 2, 2, 2, 2, 2, 2, 2]
  k_breaks: [0.0]
  k_values: [[1, 1, 1, 1, 1, 1, 1, 1]]
  delta1: 1.0
  delta2: 2.0
simulation: {seed: 4, replicas: 80, grid: [4.0, 8.0, 12.0, 16.0]}
""")
    assert run_cli(["env-spatial", cfg, "--out", str(tmp_path / "sf"),
                    "--check"]) == 0
    summary = (tmp_path / "sf" / "env_spatial_summary.csv").read_text()
    assert "case,II" in summary


def test_check_all_quick_jsonl_round_trip(tmp_path):
    cfg = write_config(tmp_path, "simulation: {seed: 9}\n")
    assert run_cli(["check-all", cfg, "--quick", "--criteria", "4,7,9,11",
                    "--out", str(tmp_path / "ca")]) == 0
    rows = reporting.read_jsonl(tmp_path / "ca" / "check_all.jsonl")
    assert rows and all(r["passed"] for r in rows)
    assert {r["criterion"] for r in rows} == {4, 7, 9, 11}
    # every output file begins with the provenance comment header
    for path in sorted((tmp_path / "ca").glob("*")):
        first = path.read_text().splitlines()[0]
        assert first.startswith("# tool: branchimm")


def test_cli_entry_point_subprocess(tmp_path):
    cfg = write_config(tmp_path, BASE)
    proc = subprocess.run(
        [sys.executable, "-m", "branchimm.cli", "classify", cfg,
         "--out", str(tmp_path / "sub")],
        capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "Ergodic"
