import json
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import build_fixture_store, instant_client
from vulnforge.dataset import build_pairs
from vulnforge.errors import EvalError, LeakageError
from vulnforge.evaluate import (
    Verdict,
    VerdictLog,
    compute_accuracy,
    parse_verdict,
    percent_tenths,
    render_report,
    run_eval,
)
from vulnforge.llm import MockBackend, MockRule


# ----------------------------------------------------------- verdict parsing


def test_verdict_line_primary():
    assert parse_verdict("VERDICT: PRESENT\nRATIONALE: bad reset") == "present"
    assert parse_verdict("VERDICT: ABSENT\nRATIONALE: clean") == "absent"


def test_verdict_line_tolerates_decoration():
    assert parse_verdict("**VERDICT:** PRESENT") == "present"
    assert parse_verdict("  verdict : absent here") == "absent"
    assert parse_verdict("Summary first.\nVERDICT: PRESENT") == "present"


def test_verdict_line_with_both_words_falls_through():
    # "PRESENT or ABSENT" on the verdict line decides nothing
    text = "VERDICT: PRESENT or ABSENT\nno other signal"
    assert parse_verdict(text) == "unparseable"


def test_negation_beats_affirmation():
    assert parse_verdict("The weakness is not present in this design.") == "absent"
    assert parse_verdict("This module does not contain the vulnerability.") == "absent"
    assert parse_verdict("I found no vulnerability here.") == "absent"


def test_affirmation_fallback():
    assert parse_verdict("The vulnerability is present in the always block.") == "present"
    assert parse_verdict("This design is vulnerable.") == "present"
    assert parse_verdict("The module contains the weakness.") == "present"


def test_unparseable_cases():
    assert parse_verdict("") == "unparseable"
    assert parse_verdict("I cannot analyze this design.") == "unparseable"
    assert parse_verdict("Maybe. Maybe not.") == "unparseable"


def test_first_verdict_line_wins():
    text = "VERDICT: ABSENT\nlater on...\nVERDICT: PRESENT"
    assert parse_verdict(text) == "absent"


# ------------------------------------------------------------------ percent


def test_percent_tenths_reference_values():
    # anchor points for the report formatter
    assert percent_tenths(913, 1000) == "91.3"
    assert percent_tenths(869, 1000) == "86.9"
    assert percent_tenths(838, 1000) == "83.8"
    assert percent_tenths(848, 1000) == "84.8"
    assert percent_tenths(744, 1000) == "74.4"
    assert percent_tenths(687, 1000) == "68.7"
    assert percent_tenths(425, 1000) == "42.5"


def test_percent_tenths_edges():
    assert percent_tenths(0, 7) == "0.0"
    assert percent_tenths(7, 7) == "100.0"
    assert percent_tenths(1, 3) == "33.3"
    assert percent_tenths(2, 3) == "66.7"
    assert percent_tenths(1, 2) == "50.0"
    assert percent_tenths(1, 1600) == "0.1"  # 0.0625 rounds half-up at tenths


def test_percent_tenths_rejects_zero_total():
    with pytest.raises(EvalError):
        percent_tenths(0, 0)


@given(st.integers(min_value=0, max_value=500), st.integers(min_value=1, max_value=500))
def test_percent_tenths_matches_decimal_rounding(correct, total):
    correct = min(correct, total)
    from decimal import ROUND_HALF_UP, Decimal

    expected = (Decimal(correct * 100) / Decimal(total)).quantize(
        Decimal("0.1"), rounding=ROUND_HALF_UP
    )
    assert percent_tenths(correct, total) == str(expected)


# -------------------------------------------------------------- verdict log


def _verdict(row_id, model="m", parsed="present"):
    return Verdict(row_id=row_id, model_name=model, parsed=parsed,
                   raw_text=f"VERDICT: {parsed.upper()}", latency=0.0)


def test_verdict_log_round_trip(tmp_path):
    path = tmp_path / "verdicts.jsonl"
    vlog = VerdictLog(path)
    vlog.record(_verdict("r1"))
    vlog.record(_verdict("r2", parsed="absent"))
    again = VerdictLog(path)
    assert len(again) == 2
    assert again.has("r1", "m") and again.has("r2", "m")
    assert not again.has("r3", "m")
    assert [v.parsed for v in again] == ["present", "absent"]


def test_verdict_log_corrupt_line(tmp_path):
    path = tmp_path / "verdicts.jsonl"
    path.write_text('{"row_id": "r1"}\n', encoding="utf-8")
    with pytest.raises(EvalError):
        VerdictLog(path)


def test_verdict_log_memory_only():
    vlog = VerdictLog()
    vlog.record(_verdict("r1"))
    assert len(vlog) == 1


# ----------------------------------------------------------------- run_eval


def _test_rows(tmp_path, n=None):
    store = build_fixture_store(tmp_path / "c")
    pairs = build_pairs(store)
    rows = [replace(p, split="test") for p in pairs]
    return rows[:n] if n else rows


def _always(verdict_word: str):
    return instant_client(MockBackend([
        MockRule(match=".", response=f"VERDICT: {verdict_word}\nRATIONALE: scripted"),
    ]))


def test_run_eval_covers_every_cell(tmp_path):
    rows = _test_rows(tmp_path)
    vlog = run_eval(rows, {"alpha": _always("PRESENT"), "beta": _always("ABSENT")})
    assert len(vlog) == 2 * len(rows)
    for row in rows:
        assert vlog.has(row.row_id, "alpha")
        assert vlog.has(row.row_id, "beta")


def test_run_eval_refuses_non_test_rows(tmp_path):
    store = build_fixture_store(tmp_path / "c")
    pairs = build_pairs(store)  # split still "unassigned"
    with pytest.raises(LeakageError) as info:
        run_eval(pairs, {"m": _always("PRESENT")})
    assert "refusing" in str(info.value)


def test_run_eval_refuses_train_rows_mixed_in(tmp_path):
    rows = _test_rows(tmp_path)
    rows[3] = replace(rows[3], split="train")
    with pytest.raises(LeakageError):
        run_eval(rows, {"m": _always("PRESENT")})


def test_run_eval_requires_backends(tmp_path):
    with pytest.raises(EvalError):
        run_eval(_test_rows(tmp_path), {})


def test_run_eval_resumes_from_log(tmp_path):
    rows = _test_rows(tmp_path)
    log_path = tmp_path / "verdicts.jsonl"
    backend = MockBackend([MockRule(match=".", response="VERDICT: PRESENT")])
    run_eval(rows[:4], {"m": instant_client(backend)}, log_path)
    first_calls = backend.calls
    assert first_calls == 4
    # resume with the full row set: only the missing cells hit the backend
    run_eval(rows, {"m": instant_client(backend)}, log_path)
    assert backend.calls == len(rows)
    assert len(VerdictLog(log_path)) == len(rows)


def test_run_eval_backend_failure_is_unparseable_cell(tmp_path):
    rows = _test_rows(tmp_path, n=2)
    flaky = instant_client(
        MockBackend([MockRule(match=".", failure="permanent")]), retry_budget=0
    )
    vlog = run_eval(rows, {"m": flaky})
    assert len(vlog) == 2
    assert all(v.parsed == "unparseable" for v in vlog)
    assert all(v.raw_text.startswith("[backend failure]") for v in vlog)


# ----------------------------------------------------------------- accuracy


def test_accuracy_always_present_is_half_right(tmp_path):
    rows = _test_rows(tmp_path)  # 5 present + 5 absent
    vlog = run_eval(rows, {"m": _always("PRESENT")})
    report = compute_accuracy(vlog, rows)
    m = report.models[0]
    assert m.total == 10
    assert m.correct == 5
    assert m.overall_percent == "50.0"
    assert m.confusion["true_present"] == 5
    assert m.confusion["false_present"] == 5
    assert m.confusion["true_absent"] == 0
    assert sum(m.confusion.values()) == m.total


def test_accuracy_oracle_detector_is_perfect(tmp_path):
    rows = _test_rows(tmp_path)
    vlog = VerdictLog()
    for row in rows:
        vlog.record(_verdict(row.row_id, parsed=row.ground_truth))
    report = compute_accuracy(vlog, rows)
    assert report.models[0].overall_percent == "100.0"
    assert report.models[0].unparseable == 0


def test_accuracy_unparseable_counts_as_wrong(tmp_path):
    rows = _test_rows(tmp_path, n=4)  # alternating present/absent by construction
    vlog = VerdictLog()
    for row in rows:
        vlog.record(_verdict(row.row_id, parsed="unparseable"))
    m = compute_accuracy(vlog, rows).models[0]
    assert m.correct == 0
    assert m.unparseable == 4
    assert sum(m.confusion.values()) == 4
    # unparseable on a present row is a miss (false_absent), and vice versa
    n_present = sum(1 for r in rows if r.ground_truth == "present")
    assert m.confusion["false_absent"] == n_present
    assert m.confusion["false_present"] == len(rows) - n_present


def test_accuracy_per_cwe_buckets(tmp_path):
    rows = _test_rows(tmp_path)
    vlog = run_eval(rows, {"m": _always("PRESENT")})
    m = compute_accuracy(vlog, rows).models[0]
    assert sum(t for _, t in m.per_cwe.values()) == m.total
    for slug, (correct, total) in m.per_cwe.items():
        assert 0 <= correct <= total
    # the lineage with a secure twin queries the same cwe twice
    assert m.per_cwe["cwe-310-csr-access"][1] == 2


def test_accuracy_model_ordering(tmp_path):
    rows = _test_rows(tmp_path)
    vlog = run_eval(rows, {
        "zeta_good": _always("PRESENT"),
        "alpha_bad": instant_client(MockBackend([MockRule(match=".", response="shrug")])),
    })
    report = compute_accuracy(vlog, rows)
    assert [m.model_name for m in report.models] == ["zeta_good", "alpha_bad"]
    assert report.models[1].unparseable == len(rows)


def test_accuracy_empty_log_raises(tmp_path):
    with pytest.raises(EvalError):
        compute_accuracy(VerdictLog(), _test_rows(tmp_path))


def test_accuracy_unknown_row_raises(tmp_path):
    vlog = VerdictLog()
    vlog.record(_verdict("phantom_row"))
    with pytest.raises(EvalError):
        compute_accuracy(vlog, _test_rows(tmp_path))


# ------------------------------------------------------------------- report


def test_report_table_shape(tmp_path):
    rows = _test_rows(tmp_path)
    vlog = run_eval(rows, {"det_a": _always("PRESENT"), "det_b": _always("ABSENT")})
    report = compute_accuracy(vlog, rows)
    table = render_report(report, tmp_path / "report")
    lines = table.splitlines()
    assert lines[0].startswith("model")
    assert "overall %" in lines[0]
    assert set(lines[1]) <= {"-", " "}
    assert lines[2].split()[0] in ("det_a", "det_b")
    assert (tmp_path / "report" / "report.txt").read_text(encoding="utf-8") == table


def test_report_plot_data(tmp_path):
    rows = _test_rows(tmp_path)
    vlog = run_eval(rows, {"m": _always("PRESENT")})
    report = compute_accuracy(vlog, rows)
    render_report(report, tmp_path / "report")
    data = json.loads((tmp_path / "report" / "plot_data.json").read_text(encoding="utf-8"))
    assert data["models"] == ["m"]
    assert data["overall_percent"] == ["50.0"]
    assert "cwe-321" in data["per_cwe"]["m"]


def test_report_is_deterministic(tmp_path):
    rows = _test_rows(tmp_path)
    vlog = run_eval(rows, {"m": _always("PRESENT")})
    report = compute_accuracy(vlog, rows)
    a = render_report(report, tmp_path / "r1")
    b = render_report(report, tmp_path / "r2")
    assert a == b
    assert (tmp_path / "r1" / "plot_data.json").read_bytes() == (
        tmp_path / "r2" / "plot_data.json"
    ).read_bytes()


def test_report_missing_cwe_cell_renders_dash(tmp_path):
    rows = _test_rows(tmp_path)
    full_log = run_eval(rows, {"wide": _always("PRESENT")})
    # a second model scored on a subset leaves gaps in the per-cwe columns
    for row in rows[:2]:
        full_log.record(_verdict(row.row_id, model="narrow", parsed=row.ground_truth))
    report = compute_accuracy(full_log, rows)
    table = render_report(report, tmp_path / "report")
    narrow_line = next(line for line in table.splitlines() if line.startswith("narrow"))
    assert "-" in narrow_line


def test_report_empty_rejected(tmp_path):
    from vulnforge.evaluate import AccuracyReport

    with pytest.raises(EvalError):
        render_report(AccuracyReport(models=()), tmp_path / "r")
