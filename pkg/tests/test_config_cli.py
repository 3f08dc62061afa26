import numpy as np
import pytest

from volcontract.cli import attach_negative_values, main
from volcontract.config import (
    RunConfig,
    build_config,
    format_config,
    parse_config_text,
    parse_method,
    parse_region,
)
from volcontract.errors import ContractError


@pytest.fixture
def outdir(tmp_path, monkeypatch):
    monkeypatch.setenv("VOLCONTRACT_OUTPUT_DIR", str(tmp_path))
    return tmp_path


def summary(out):
    return [line for line in out.splitlines() if line.startswith("summary")][-1]


# -- config -----------------------------------------------------------------


def test_config_text_and_overrides():
    text = "# pendulum run\nsystem = pendulum\nparams = 0.1\nh = 0.05  # step\nx0 = 1, 0\nn-steps = 20\n"
    cfg = build_config(text, {"h": "0.01", "seed": None})
    assert cfg.system == "pendulum" and cfg.params == (0.1,)
    assert cfg.h == 0.01 and cfg.n_steps == 20 and cfg.x0 == (1.0, 0.0)
    assert build_config(format_config(cfg)) == cfg


def test_config_errors():
    with pytest.raises(ContractError):
        parse_config_text("colour = red\n")
    with pytest.raises(ContractError):
        parse_config_text("just words\n")
    with pytest.raises(ContractError):
        build_config("h = fast\n")
    with pytest.raises(ContractError):
        RunConfig(h=0.0, x0=(1.0, 0.0)).validate(2)
    with pytest.raises(ContractError):
        RunConfig(x0=(1.0,)).validate(2)


def test_parse_method():
    spec = parse_method("split(pair(1,2), midpoint, 1)")
    assert (spec.kind, spec.scheme, spec.method2d, spec.order) == ("split", "pair(1,2)", "midpoint", 1)
    assert parse_method("lorenz-exact").order == 2
    np.testing.assert_array_equal(parse_method("explicit-split(6,0;0,-6)").matrix, np.diag([6.0, -6.0]))
    assert parse_method("gauss2").kind == "gauss2"
    with pytest.raises(ContractError):
        parse_method("split(pair(1,2), midpoint, 3)")


def test_parse_region():
    np.testing.assert_array_equal(parse_region("-2,2", 3), [[-2, 2]] * 3)
    np.testing.assert_array_equal(parse_region("0,1;-1,0", 2), [[0, 1], [-1, 0]])
    with pytest.raises(ContractError):
        parse_region("1,0", 2)
    with pytest.raises(ContractError):
        parse_region("0,1;0,1", 3)


def test_negative_values_attached():
    assert attach_negative_values(["--x0", "-1,2", "--h", "0.1"]) == ["--x0=-1,2", "--h", "0.1"]
    assert attach_negative_values(["--plot", "-1"]) == ["--plot=-1"]
    assert attach_negative_values(["-o", "-1"]) == ["-o", "-1"]


# -- integrate --------------------------------------------------------------


def test_integrate_lorenz_exact(outdir, capsys):
    code = main(["integrate", "--system", "lorenz", "--method", "lorenz-exact", "--h", "0.01",
                 "--n-steps", "1000", "--x0", "1,1,1", "--output", "lorenz.csv"])
    assert code == 0
    line = summary(capsys.readouterr().out)
    cum = float(line.split("cum_logdet=")[1].split()[0])
    assert cum == pytest.approx(-410 / 3, rel=1e-9)
    rows = (outdir / "lorenz.csv").read_text().splitlines()
    assert rows[0] == "t,x1,x2,x3,step_logdet,cum_logdet,div_integral,ratio"
    assert len(rows) == 1002


def test_integrate_pendulum_area_preserving(outdir, capsys):
    assert main(["integrate", "--system", "pendulum", "--params", "0", "--method", "midpoint",
                 "--x0", "1,0", "--n-steps", "200", "--h", "0.1"]) == 0
    text = (outdir / "pendulum_midpoint.csv").read_text().splitlines()[1:]
    cum = np.array([float(r.split(",")[4]) for r in text])
    assert np.max(np.abs(cum)) <= 1e-12


def test_integrate_byte_identical(outdir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("system = pendulum\nparams = 0.1\nmethod = gauss2\nx0 = 1,0\nn_steps = 50\nh = 0.1\n")
    assert main(["integrate", "--config", str(cfg), "-o", "a.csv"]) == 0
    assert main(["integrate", "--config", str(cfg), "-o", "b.csv"]) == 0
    assert (outdir / "a.csv").read_bytes() == (outdir / "b.csv").read_bytes()


def test_integrate_split_method(outdir, capsys):
    code = main(["integrate", "--system", "lorenz", "--method", "split(pair(1,2),midpoint,2)",
                 "--x0", "1,1,1", "--n-steps", "10", "--h", "0.01", "-o", "split.csv"])
    assert code == 0
    assert "violations=0" in summary(capsys.readouterr().out)


def test_integrate_explicit_split(outdir, capsys):
    code = main(["integrate", "--system", "linear2d", "--params", "-1,5,-5,-1",
                 "--method", "explicit-split(6,0;0,-6)", "--region", "-2,2",
                 "--x0", "1,0", "--n-steps", "20", "--h", "0.005", "-o", "ex.csv"])
    assert code == 0
    assert "violations=0" in summary(capsys.readouterr().out)


def test_integrate_wrong_x0_writes_nothing(outdir, capsys):
    code = main(["integrate", "--system", "lorenz", "--method", "midpoint", "--x0", "1,1", "-o", "bad.csv"])
    assert code != 0
    assert "status=error" in summary(capsys.readouterr().out)
    assert list(outdir.iterdir()) == []


def test_integrate_lorenz_exact_needs_lorenz(outdir):
    assert main(["integrate", "--system", "pendulum", "--method", "lorenz-exact", "--x0", "1,0"]) != 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_integrate_failure_leaves_partial(outdir, capsys):
    code = main(["integrate", "--system", "x-squared", "--method", "midpoint", "--x0", "0.5,0",
                 "--h", "1", "--n-steps", "50", "-o", "blow.csv"])
    assert code == 2
    assert "status=failed" in summary(capsys.readouterr().out)
    assert not (outdir / "blow.csv").exists()
    partial = outdir / "blow.csv.partial"
    assert partial.read_text().startswith("t,x1,x2,")


def test_integrate_plot(outdir):
    assert main(["integrate", "--system", "pendulum", "--x0", "1,0", "--n-steps", "10",
                 "-o", "p.csv", "--plot"]) == 0
    assert (outdir / "p.png").read_bytes()[:4] == b"\x89PNG"


# -- analyze-tableau --------------------------------------------------------


def test_analyze_tableau_reports(outdir, capsys):
    assert main(["analyze-tableau", "rk3", "rk4", "midpoint"]) == 0
    blocks = capsys.readouterr().out.strip().split("\n\n")
    fields = [dict(line.split("=", 1) for line in b.splitlines()) for b in blocks]
    rk3, rk4, mid = fields
    assert (rk3["p"], rk3["a"], rk3["b"], rk3["verdict"]) == ("3", "-1/24", "-1/120", "Contractive")
    assert rk4["verdict"] == "NotContractive"
    assert mid["symplectic"] == "true" and mid["verdict"] == "Borderline"
    assert float(mid["ustar"]) >= 1.9


def test_analyze_tableau_file_and_plot(outdir, tmp_path, capsys):
    path = tmp_path / "heun2.txt"
    path.write_text("s = 2\na = 0, 0 ; 1, 0\nb = 1/2, 1/2\n")
    assert main(["analyze-tableau", str(path), "--plot", "-o", str(tmp_path / "r.txt")]) == 0
    assert "tableau=heun2" in capsys.readouterr().out
    assert (outdir / "order-star_heun2.png").exists()
    assert (tmp_path / "r.txt").read_text().startswith("tableau=heun2")


def test_analyze_tableau_malformed(outdir, tmp_path):
    path = tmp_path / "broken.txt"
    path.write_text("a = 1/2\n")
    assert main(["analyze-tableau", str(path)]) == 1


# -- split-check ------------------------------------------------------------


def test_split_check_lorenz(outdir, tmp_path, capsys):
    manifest = tmp_path / "plan.txt"
    assert main(["split-check", "--system", "lorenz", "--scheme", "pair(1,2)",
                 "--write-manifest", str(manifest)]) == 0
    out = capsys.readouterr().out
    values = dict(line.split("=", 1) for line in out.splitlines() if line.count("=") == 1)
    assert float(values["reconstruction_residual"]) <= 1e-8
    assert float(values["closure_residual"]) <= 1e-8
    for line in out.splitlines():
        if line.startswith("piece="):
            assert float(line.split("div_max=")[1]) <= 1e-8
    assert "summary status=ok" in out
    assert main(["split-check", "--manifest", str(manifest)]) == 0


def test_split_check_rotation(outdir, capsys):
    assert main(["split-check", "--system", "rotation", "--scheme", "diag-1overn", "--region", "-2,2"]) == 0
    pieces = [l for l in capsys.readouterr().out.splitlines() if l.startswith("piece=")]
    assert pieces and all(p.startswith("piece=A") for p in pieces)


def test_split_check_refuses_indefinite(outdir, capsys):
    assert main(["split-check", "--system", "x-squared", "--scheme", "diag-1overn", "--region", "-1,1"]) == 2
    captured = capsys.readouterr()
    assert "refused" in captured.err and "state" in captured.err
    assert "summary status=refused" in captured.out


# -- compliance-scan --------------------------------------------------------


def test_compliance_scan_cli(outdir, capsys):
    args = ["compliance-scan", "--method", "midpoint", "--h-min", "1e-3", "--h-max", "1",
            "--n-h", "7", "--n-fields", "2", "--trace-levels", "0,-1e-6,-1", "--plot"]
    assert main(args) == 0
    out = capsys.readouterr().out
    assert out.strip().endswith("verdict=contractive")
    table = outdir / "compliance_midpoint_linear2d.txt"
    assert table.read_text() == out
    assert table.with_suffix(".png").exists()
