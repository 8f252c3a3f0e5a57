import json
import subprocess
import sys

import pytest

from spdeinv.cli import main, run
from spdeinv.config import parse_config
from spdeinv.dynamics import FiniteElement, SpectralGalerkin
from spdeinv.errors import InvalidConfig, SchemaViolation, ValueOutOfRange

MINIMAL = {"variant": "spectral", "tau": 0.05, "steps": 1000, "seed": 7}


def write_cfg(tmp_path, **over):
    d = dict(MINIMAL, **over)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return str(p)


def issues_of(d):
    with pytest.raises(InvalidConfig) as info:
        parse_config(json.dumps(d))
    return info.value.errors


# --- parsing -----------------------------------------------------------------

def test_minimal_defaults():
    cfg = parse_config(json.dumps(MINIMAL).encode())
    assert cfg["burn_in"] == 100
    assert cfg["replicas"] == 1
    assert cfg.seed == 7
    sc = cfg.scheme()
    assert isinstance(sc.variant, SpectralGalerkin) and sc.variant.M == 64
    assert sc.nonlinearity is None
    assert sc.functional.kind == "cos_inner"


def test_negative_tau():
    errs = issues_of(dict(MINIMAL, tau=-0.1))
    assert any(isinstance(e, ValueOutOfRange) and e.path == "tau" for e in errs)


def test_unknown_key_named():
    errs = issues_of(dict(MINIMAL, taus_list=[0.1]))
    assert [e.path for e in errs if isinstance(e, SchemaViolation)] == ["taus_list"]


def test_all_errors_reported():
    errs = issues_of(dict(MINIMAL, tau=-1.0, steps=0, extra=1, bench={"taus": [0.1], "bogus": 2}))
    paths = {e.path for e in errs}
    assert {"tau", "steps", "extra", "bench.bogus"} <= paths


def test_nested_unknown_key_in_functional():
    errs = issues_of(dict(MINIMAL, functional={"kind": "exp_neg_sq", "scal": 2.0}))
    assert any(e.path == "functional.scal" for e in errs)


def test_cross_checks():
    errs = issues_of(dict(MINIMAL, burn_in=1000))
    assert any(e.path == "burn_in" for e in errs)
    errs = issues_of(dict(MINIMAL, variant="fem", mesh=[0.5, 0.2]))
    assert any(e.path == "mesh" for e in errs)
    errs = issues_of(dict(MINIMAL, tau=2.0))
    assert any(e.path == "tau" for e in errs)
    errs = issues_of(dict(MINIMAL, poisson={"M": 1, "points": [[0.0]]}))
    assert any(e.path == "poisson.points[0]" for e in errs)


def test_h_out_of_range():
    errs = issues_of(dict(MINIMAL, variant="fem", h=1.5))
    assert any(isinstance(e, ValueOutOfRange) and e.path == "h" for e in errs)


def test_bad_json():
    with pytest.raises(InvalidConfig):
        parse_config(b"{not json")
    with pytest.raises(InvalidConfig):
        parse_config(b"\xff\xfe")


def test_fem_variants():
    cfg = parse_config(json.dumps(dict(MINIMAL, variant="fem", h=0.125)))
    v = cfg.variant()
    assert isinstance(v, FiniteElement) and v.operator.n == 7
    cfg = parse_config(json.dumps(dict(MINIMAL, variant="fem", mesh=[0.1, 0.5, 0.6])))
    assert cfg.variant().operator.n == 3


def test_blocks_merge_defaults():
    cfg = parse_config(json.dumps(dict(MINIMAL, poisson={"T_max": 1.0})))
    assert cfg["poisson"]["T_max"] == 1.0
    assert cfg["poisson"]["delta"] == 0.05


def test_with_seed_is_copy():
    cfg = parse_config(json.dumps(MINIMAL))
    other = cfg.with_seed(99)
    assert other.seed == 99 and cfg.seed == 7


# --- command line ------------------------------------------------------------

def test_oracle_prints_table(tmp_path, capsys):
    path = write_cfg(tmp_path, oracle={"laws": ["continuous"]})
    assert main(["oracle", "--config", path]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "variant,parameter,value,certified_error"
    assert out[1].startswith("continuous,-,0.0833333333333333")


def test_oracle_writes_file_with_out(tmp_path, capsys):
    path = write_cfg(tmp_path, variant="fem", uniform_n=15)
    assert main(["oracle", "--config", path, "--out", str(tmp_path / "o")]) == 0
    text = (tmp_path / "o" / "oracle.csv").read_text()
    assert text == capsys.readouterr().out
    assert len(text.splitlines()) == 5


def test_bench_tau_single_point(tmp_path, capsys):
    path = write_cfg(tmp_path, functional={"kind": "second_moment"}, bench={"taus": [0.1]})
    assert main(["bench-tau", "--config", path, "--out", str(tmp_path)]) == 2
    assert "InsufficientSignal" in capsys.readouterr().err


def test_bench_tau_exact(tmp_path):
    path = write_cfg(tmp_path, functional={"kind": "second_moment"})
    assert main(["bench-tau", "--config", path, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "tau_sweep.csv").read_text().splitlines()
    assert lines[0] == "parameter,error,halfwidth" and len(lines) == 7
    assert lines[-1].startswith("# slope=0.39")


def test_bench_h_exact(tmp_path):
    path = write_cfg(tmp_path, variant="fem", uniform_n=15, functional={"kind": "second_moment"})
    assert main(["bench-h", "--config", path, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "h_sweep.csv").read_text().splitlines()[-1].startswith("# slope=")


def test_invalid_config_exit_1(tmp_path, capsys):
    path = write_cfg(tmp_path, tau=-0.1, taus_list=[1])
    assert main(["oracle", "--config", path]) == 1
    err = capsys.readouterr().err
    assert "tau" in err and "taus_list" in err


def test_missing_config_exit_1(tmp_path):
    assert main(["oracle", "--config", str(tmp_path / "nope.json")]) == 1


def test_bad_flags(tmp_path):
    path = write_cfg(tmp_path)
    assert main(["oracle", "--config", path, "--threads", "0"]) == 1
    assert main(["oracle", "--config", path, "--seed", "-3"]) == 1
    with pytest.raises(SystemExit):
        main(["oracle"])


def test_poisson_tail_failure_exit_2(tmp_path, capsys):
    path = write_cfg(tmp_path, poisson={"points": [[2.0]], "T_max": 0.02, "replicas": 50_000})
    assert main(["poisson-check", "--config", path, "--out", str(tmp_path)]) == 2
    assert "TailNotConverged" in capsys.readouterr().err


def test_poisson_check(tmp_path):
    path = write_cfg(tmp_path, poisson={"points": [[0.0]], "replicas": 2000})
    assert main(["poisson-check", "--config", path, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "probe.csv").read_text().splitlines()
    assert lines[0] == "M,phi,x,psi_hat,residual,T_max,replicas,seed"
    assert lines[1].endswith(",2.0,2000,7")


def test_simulate_and_estimate_deterministic(tmp_path):
    path = write_cfg(tmp_path, M=8, nonlinearity={"kind": "sine"}, replicas=2)
    for sub, name in (("simulate", "trajectory.csv"), ("estimate", "estimate.csv")):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main([sub, "--config", path, "--out", str(a), "--threads", "2"]) == 0
        assert main([sub, "--config", path, "--out", str(b), "--threads", "1"]) == 0
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_override(tmp_path):
    path = write_cfg(tmp_path, M=8)
    main(["simulate", "--config", path, "--out", str(tmp_path / "a")])
    main(["simulate", "--config", path, "--out", str(tmp_path / "b"), "--seed", "8"])
    main(["simulate", "--config", write_cfg(tmp_path, M=8, seed=8), "--out", str(tmp_path / "c")])
    a, b, c = ((tmp_path / d / "trajectory.csv").read_bytes() for d in "abc")
    assert a != b and b == c


def test_estimate_row_contents(tmp_path):
    path = write_cfg(tmp_path, M=8, functional={"kind": "constant", "value": 2.5})
    assert main(["estimate", "--config", path, "--out", str(tmp_path)]) == 0
    header, row = (tmp_path / "estimate.csv").read_text().splitlines()
    rec = dict(zip(header.split(","), row.split(",")))
    assert rec["mean"] == "2.5" and rec["halfwidth"] == "0.0" and rec["h_or_M"] == "8"


def test_unwritable_out_exit_1(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    path = write_cfg(tmp_path, M=4)
    assert main(["simulate", "--config", path, "--out", str(blocker / "sub")]) == 1


def test_run_unknown_subcommand():
    assert run("plot", parse_config(json.dumps(MINIMAL))) == 1


def test_module_entry_point(tmp_path):
    path = write_cfg(tmp_path, oracle={"laws": ["continuous"]})
    proc = subprocess.run([sys.executable, "-m", "spdeinv", "oracle", "--config", path],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.startswith("variant,parameter,value,certified_error\n")
