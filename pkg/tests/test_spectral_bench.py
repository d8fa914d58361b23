import pytest
from openpyxl import load_workbook

from src.instruments import spectral_bench
from src.instruments.spectral_bench import (DEFAULT_CASES, check_residuals, export_bench, run_bench, run_case,
                                            validate_cases)
from src.utils.errors import ConfigError, InvariantViolation

SMALL_CASES = [
    {"name": "interval_64", "nodes": 64, "steps": 50, "tau": 0.01, "extent": 8.0},
    {"name": "pair_12", "nodes": 12, "particles": 2, "steps": 20, "tau": 0.02, "extent": 3.0},
    {"name": "povm_8", "nodes": 8, "steps": 16, "tau": 0.05, "extent": 2.0, "povm": True},
]


def test_cases_report_small_residuals():
    reports = run_bench({"cases": SMALL_CASES}, seed=3)
    assert [r.case for r in reports] == ["interval_64", "pair_12", "povm_8"]
    assert reports[1].n_nodes == 144
    for report in reports:
        assert report.residuals["contraction"] <= 1e-12
        assert report.residuals["flux_balance"] <= 1e-12
        assert report.residuals["dissipativity"] <= 1e-12
        assert report.wall_ms >= 0.0
    assert reports[0].residuals["povm"] is None
    assert reports[2].residuals["povm"] <= 1e-10


def test_residuals_are_deterministic_across_workers():
    serial = run_bench({"cases": SMALL_CASES}, seed=1, jobs=1)
    parallel = run_bench({"cases": SMALL_CASES}, seed=1, jobs=3)
    assert [r.residuals for r in serial] == [r.residuals for r in parallel]


def test_missing_key_names_the_field():
    text = '{\n  "bench": {\n    "cases": [{"name": "x", "nodes": 8}]\n  }\n}\n'
    with pytest.raises(ConfigError, match=r"bench.cases\[0\].steps required \(line 3\)"):
        validate_cases([{"name": "x", "nodes": 8}], text)
    with pytest.raises(ConfigError):
        validate_cases([{"name": "x", "nodes": 2, "steps": 1, "tau": 0.1}])


def test_residual_above_tolerance_fails_the_bench(monkeypatch):
    clean = [run_case(SMALL_CASES[0])]
    assert check_residuals(clean) == clean
    monkeypatch.setattr(spectral_bench, "dissipativity_defect", lambda H, probes: 1.0)
    reports = run_bench({"cases": SMALL_CASES[:1]})
    assert reports[0].residuals["dissipativity"] == 1.0
    with pytest.raises(InvariantViolation, match=r"interval_64.dissipativity = 1.000e\+00"):
        check_residuals(reports)


def test_excel_export(tmp_path):
    reports = [run_case(case) for case in SMALL_CASES[:2]]
    json_path, xlsx_path = export_bench(reports, str(tmp_path))
    workbook = load_workbook(xlsx_path)
    assert workbook.sheetnames == ["Cases", "Statistics"]
    cases = workbook["Cases"]
    assert [c.value for c in cases[1]][:3] == ["Case", "Nodes", "Steps"]
    assert cases.cell(row=2, column=1).value == "interval_64"
    stats = workbook["Statistics"]
    for row in stats.iter_rows(min_row=2):
        if "Mean" in row[0].value:
            assert row[0].font.bold and row[1].font.bold
            assert row[0].fill.start_color.rgb.endswith("FFFF00")
        else:
            assert not row[0].font.bold


@pytest.mark.slow
def test_default_cases():
    reports = run_bench(jobs=len(DEFAULT_CASES))
    assert [r.case for r in reports] == [c["name"] for c in DEFAULT_CASES]
    for report in reports:
        assert report.residuals["contraction"] <= 1e-13
        assert report.residuals["flux_balance"] <= 1e-12
