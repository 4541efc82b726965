import json
import math

import pytest

from abpcheck.cli import main
from abpcheck.config import ConfigError, load_config, parse_config
from abpcheck.report import ReportError, emit_report, format_float, parse_csv, parse_json, parse_number, render
from abpcheck.runner import COLUMNS, convergence_study, run_batch, run_case

BASE = """
[run]
seed = 4

[case.disk]
theorem = sobolev_domain
manifold.preset = euclidean
"""

REQUIRED = ("case_id", "theorem", "n", "m", "theta", "lhs", "rhs", "ratio", "status", "h", "ode_tol", "mc_stderr",
            "seed")


def _case(extra: str, theorem="sobolev_domain") -> str:
    return f"[run]\nseed = 1\n\n[case.c]\ntheorem = {theorem}\n{extra}\n"


@pytest.mark.parametrize("text, message", [
    (_case("manifold.alpha = 0.5"), "unknown manifold parameter"),
    (_case("manifold.preset = cone_smoothed\nmanifold.beta = 0.5"), "unknown manifold parameter"),
    (_case("manifold.preset = torus"), "unknown preset"),
    (_case("density.preset = quadratic\ndensity.c = 1"), "unknown density parameter"),
    (_case("domain.kind = cube"), "domain.kind"),
    (_case("domain.radius = -1.0"), "must be positive"),
    (_case("solver.method = spectral"), "solver.method"),
    (_case("solver.tol = 1e-3"), "unknown solver key"),
    (_case("transport.experiments = ['teleport']"), "unknown transport experiments"),
    (_case("sigma.preset = flat_disk"), "only apply to submanifold"),
    (_case("", theorem="michael_simon"), "need sigma.preset"),
    (_case("", theorem="poincare"), "theorem must be one of"),
    (_case("manifold.curvature_class = scalar"), "curvature_class"),
    (_case("colour = red"), "unknown key"),
    (_case("shape.preset = x"), "unknown section"),
    (_case("domain.radius = 'big'"), "expected float"),
    ("[run]\nseed = 1\n", "no [case.*] sections"),
    ("[run]\n\n[case.c]\ntheorem = sobolev_domain\n", "seed is required"),
    ("[run]\nseed = -3\n\n[case.c]\ntheorem = sobolev_domain\n", "nonnegative"),
    ("[run]\nseed = 1\nthreads = 0\n\n[case.c]\ntheorem = sobolev_domain\n", "threads"),
    ("[run]\nseed = 1\ncolour = 2\n\n[case.c]\ntheorem = sobolev_domain\n", "unknown key"),
    ("[run]\nseed = 1\n\n[other]\nx = 1\n", "unknown section"),
])
def test_config_errors(text, message):
    with pytest.raises(ConfigError, match=message.replace("[", r"\[").replace("*", r"\*").replace(".", r"\.")):
        parse_config(text)


def test_config_defaults_and_seed_override():
    run = parse_config(BASE)
    case = run.cases[0]
    assert run.seed == 4 and case.seed == 4
    assert case.domain == {"kind": "ball", "radius": 1.0}
    assert case.solver["method"] == "radial"
    assert parse_config(BASE, seed=9).cases[0].seed == 9
    assert case.key() == parse_config(BASE).cases[0].key()


def test_config_aliases():
    text = _case('manifold.profile = "cone_smoothed"\nmanifold.alpha = 0.5\nmanifold.class = "sectional"')
    case = parse_config(text).cases[0]
    assert case.manifold["preset"] == "cone_smoothed" and case.manifold["curvature_class"] == "sectional_nonneg"
    with pytest.raises(ConfigError, match="both"):
        parse_config(_case("manifold.profile = euclidean\nmanifold.preset = euclidean"))


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.cfg")


def test_shipped_configs_parse():
    for name in ("default", "transport", "convergence"):
        assert load_config(f"configs/{name}.cfg").cases


def test_report_columns_and_row():
    rows = run_case(parse_config(BASE).cases[0])
    assert COLUMNS[:len(REQUIRED)] == REQUIRED
    row = rows[0]
    assert row.status == "pass" and row.n == 2 and row.theta == 1.0
    assert abs(row.ratio - 1.0) <= 1e-6


def test_errors_become_fail_rows():
    cfg = parse_config(_case("density.preset = quadratic\ndensity.a = 0.5")).cases[0]
    rows = run_case(cfg)
    assert len(rows) == 1 and rows[0].status == "fail"
    assert "DensityError" in rows[0].violation


def test_csv_json_roundtrip():
    rows = run_batch(parse_config(BASE + "\n[case.bad]\ntheorem = sobolev_domain\ndensity.preset = quadratic\n"
                                         "density.a = 0.5\n").cases)
    csv_rows = parse_csv(render(rows, "csv"))
    json_rows = parse_json(render(rows, "json"))
    assert len(csv_rows) == len(json_rows) == len(rows)
    for row, c, j in zip(rows, csv_rows, json_rows):
        for name in COLUMNS:
            value = getattr(row, name)
            if isinstance(value, float):
                back_c, back_j = parse_number(c[name]), parse_number(j[name])
                assert (math.isnan(value) and math.isnan(back_c) and math.isnan(back_j)) or value == back_c == back_j
            else:
                assert str(value) == c[name] and value == j[name]


def test_json_has_no_bare_nan():
    rows = run_batch(parse_config(BASE).cases)
    text = render(rows, "json")
    json.loads(text, parse_constant=lambda c: pytest.fail(f"bare {c} in JSON"))
    assert json.loads(text)["columns"] == list(COLUMNS)


def test_report_errors(tmp_path):
    with pytest.raises(ReportError):
        render([], "csv")
    rows = run_batch(parse_config(BASE).cases)
    with pytest.raises(ReportError):
        render(rows, "xml")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ReportError):
        emit_report(rows, blocker / "out.csv")


def test_format_float():
    assert format_float(0.1) == "0.10000000000000001"
    assert parse_number(format_float(0.1)) == 0.1
    assert format_float(math.inf) == "inf" and format_float(-math.inf) == "-inf"
    assert format_float(math.nan) == "nan"


def test_determinism_across_runs_and_threads():
    text = BASE + """
[case.cone]
theorem = sobolev_domain
manifold.preset = cone_smoothed
manifold.alpha = 0.5
transport.r = [10.0]
transport.budget = 5000
transport.experiments = ["capture"]
"""
    cases = parse_config(text).cases
    a = render(run_batch(cases, 1, transport=True))
    b = render(run_batch(cases, 4, transport=True))
    assert a == b
    # a different seed changes the Monte Carlo rows only
    c = render(run_batch(parse_config(text, seed=5).cases, 1, transport=True))
    assert a != c


def test_vacuous_transport_rows_are_inconclusive():
    text = BASE.replace("euclidean", 'euclidean\ntransport.r = [0.5]\ntransport.experiments = ["capture", "coverage"]')
    rows = run_batch(parse_config(text).cases, transport=True)
    extra = [r for r in rows if r.theorem in ("volume_capture", "coverage")]
    assert len(extra) == 2
    assert all(r.status == "inconclusive" and r.violation == "vacuous" for r in extra)


def test_convergence_rows():
    cfg = parse_config(BASE.replace("euclidean", "euclidean\nsolver.method = mesh")).cases[0]
    rows = convergence_study(cfg, [0.2, 0.1, 0.05])
    assert {r.quantity for r in rows} == {"u", "grad_u", "ratio"}
    u = [r for r in rows if r.quantity == "u"]
    assert all(r.error > 0 for r in u) and u[-1].order >= 1.8
    with pytest.raises(ValueError):
        convergence_study(cfg, [0.1, 0.05])


def _write(tmp_path, text):
    path = tmp_path / "case.cfg"
    path.write_text(text)
    return str(path)


def test_cli_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, BASE)
    out = tmp_path / "out.json"
    assert main(["check-sobolev", "--config", good, "--out", str(out), "--format", "json"]) == 0
    assert parse_json(out.read_text())[0]["status"] == "pass"
    assert main(["check-sobolev", "--config", good]) == 0
    assert capsys.readouterr().out.startswith("case_id,theorem,")
    # no submanifold cases in this config
    assert main(["check-michael-simon", "--config", good]) == 2
    bad = _write(tmp_path, BASE + "\n[case.bad]\ntheorem = sobolev_domain\ndensity.preset = quadratic\n"
                                  "density.a = 0.5\n")
    assert main(["check-sobolev", "--config", bad]) == 1
    assert main(["check-sobolev", "--config", str(tmp_path / "missing.cfg")]) == 2
    noseed = _write(tmp_path, "[case.c]\ntheorem = sobolev_domain\n")
    assert main(["check-sobolev", "--config", noseed]) == 2
    assert main(["check-sobolev", "--config", noseed, "--seed", "3"]) == 0
    assert main(["list-presets"]) == 0
    assert "cone_smoothed" in capsys.readouterr().out
