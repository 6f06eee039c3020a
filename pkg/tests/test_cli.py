import json
import os
import re

import pytest

from ipacheck.cli import render_compositional, run
from ipacheck.corpus import CORPUS_DIR, expected_results, load_fixture
from ipacheck.explorer import ExplorationReport

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


def fx(name, file="manifest.ipam"):
    return os.path.join(CORPUS_DIR, name, file)


def call(argv, capsys):
    try:
        code = run(argv)
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


def strip_ms(obj):
    if isinstance(obj, dict):
        return {k: strip_ms(v) for k, v in obj.items() if not k.endswith("_ms") and k != "ratio"}
    if isinstance(obj, list):
        return [strip_ms(x) for x in obj]
    return obj


def mask_times(table: str) -> str:
    out = []
    for line in table.splitlines():
        if re.match(r"(T_\w+|ratio)\s", line):
            line = re.sub(r"\d+(\.\d+)?$", "#", line)
        out.append(line)
    return "\n".join(out) + "\n"


# --- exit codes ------------------------------------------------------------------------


def test_check_healthy(tmp_path, capsys):
    code, out, _ = call(["check", "--manifest", fx("raft3"),
                         "--trace-out", str(tmp_path / "t.json")], capsys)
    assert code == 0
    assert "conclusion: S => A" in out
    assert not (tmp_path / "t.json").exists()


def test_check_buggy_spec_writes_trace(tmp_path, capsys):
    trace = tmp_path / "cex.json"
    code, out, err = call(["check", fx("raft3-bug-quorum", "spec.ipa"), "--manifest", fx("raft3"),
                           "--trace-out", str(trace)], capsys)
    assert code == 1
    assert "conclusion: blocked: C_Vote => A fails" in out
    data = json.loads(trace.read_text())
    assert data["source"]["target"] == "C_Vote"
    assert data["reason"] == "mapped action disabled"
    assert len(data["steps"]) <= expected_results("raft3-bug-quorum")["max_trace_length"]
    code, out, _ = call(["replay", str(trace)], capsys)
    assert code == 0 and out.startswith("valid")


def test_replay_detects_tampering(tmp_path, capsys):
    trace = tmp_path / "cex.json"
    call(["check", fx("raft3-bug-quorum", "spec.ipa"), "--manifest", fx("raft3"),
          "--trace-out", str(trace)], capsys)
    data = json.loads(trace.read_text())
    pairs = data["steps"][-1]["state"]["term"]["map"]
    pairs[0][1] = 1 if pairs[0][1] == 2 else 2
    trace.write_text(json.dumps(data))
    code, out, _ = call(["replay", str(trace)], capsys)
    assert code == 1 and out.startswith(f"invalid at step {len(data['steps'])}")


def test_constraint_failure(capsys):
    code, out, _ = call(["check", "--manifest", fx("raft3-bug-abs-scope")], capsys)
    assert code == 1
    assert "constraint 1 fails for Vote" in out and "nextIndex" in out


def test_analyze_missing_file(capsys):
    code, _, err = call(["analyze", "missing.ipa"], capsys)
    assert code == 2
    assert "no such file" in err and err.startswith("missing.ipa:1:1: error[E-io]")


def test_parse_error_is_usage(tmp_path, capsys):
    bad = tmp_path / "bad.ipa"
    bad.write_text("spec Bad\nvars\n  x : 0..3\ninit\n  x = y\n")
    code, _, err = call(["analyze", str(bad)], capsys)
    assert code == 2 and re.search(r"bad\.ipa:\d+:\d+: error\[E-", err)


def test_unknown_flag(capsys):
    code, _, err = call(["check", "--manifest", fx("counter"), "--frobnicate"], capsys)
    assert code == 2 and "unrecognized arguments" in err


def test_bound_exceeded(capsys):
    code, out, _ = call(["check", "--manifest", fx("coordinator-toy"), "--max-states", "3"], capsys)
    assert code == 3 and "inconclusive" in out


def test_analyze_ok_and_failing(capsys):
    code, out, _ = call(["analyze", "--manifest", fx("raft3")], capsys)
    assert code == 0 and "interaction: log, state, term" in out
    code, _, _ = call(["analyze", "--manifest", fx("raft3-bug-abs-scope")], capsys)
    assert code == 1


def test_analyze_json_matches_golden(capsys):
    code, out, _ = call(["analyze", fx("micro-fixpoint-3", "spec.ipa"), "--format", "json"],
                        capsys)
    j = json.loads(out)
    want = expected_results("micro-fixpoint-3")["analysis"]
    assert code == 0 and j["modules"] == want["modules"]


def test_direct_codes(tmp_path, capsys):
    code, out, _ = call(["direct", "--manifest", fx("coordinator-toy")], capsys)
    assert code == 0 and "S => A" in out
    trace = tmp_path / "m.json"
    code, out, _ = call(["direct", "--manifest", fx("counter-mutant"),
                         "--trace-out", str(trace)], capsys)
    assert code == 1 and "wrong post-state" in out
    assert call(["replay", str(trace)], capsys)[0] == 0


def test_deadlock_flag(tmp_path, capsys):
    args = ["direct", "--manifest", fx("counter"), "--trace-out", str(tmp_path / "d.json")]
    assert call(args, capsys)[0] == 0
    assert call(args + ["--deadlock-error"], capsys)[0] == 1
    assert json.loads((tmp_path / "d.json").read_text())["deadlock"] is True


def test_compare_coordinator(capsys):
    code, out, _ = call(["compare", "--manifest", fx("coordinator-toy")], capsys)
    assert code == 0
    for label in ("T_A", "T_Control", "T_Worker", "T_comp", "T_direct", "ratio"):
        assert re.search(rf"^{label}\s", out, re.M), label


def test_json_is_stdout_only_and_round_trips(capsys):
    code, out, err = call(["direct", "--manifest", fx("coordinator-toy"), "--format", "json"],
                          capsys)
    assert code == 0 and err == ""
    j = json.loads(out)
    rep = ExplorationReport.from_json(j["exploration"])
    assert rep.to_json() == j["exploration"]
    man = load_fixture("coordinator-toy").manifest()
    from ipacheck.composer import direct_check

    assert strip_ms(j) == strip_ms(direct_check(man.root, man).to_json(False))


def test_workers_flag_does_not_change_json(capsys):
    outs = []
    for w in ("1", "2"):
        code, out, _ = call(["check", "--manifest", fx("coordinator-toy"), "--format", "json",
                             "--workers", w], capsys)
        outs.append(strip_ms(json.loads(out)))
    assert outs[0] == outs[1]


def test_workers_env_default(monkeypatch, capsys):
    monkeypatch.setenv("IPA_CHECK_WORKERS", "2")
    code, out, _ = call(["check", "--manifest", fx("counter-tick")], capsys)
    assert code == 0


def test_no_invariants_note(capsys):
    code, out, _ = call(["check", "--manifest", fx("counter-tick")], capsys)
    assert code == 0 and "invariants: no invariants declared" in out


def test_out_file(tmp_path, capsys):
    dest = tmp_path / "report.txt"
    code, out, _ = call(["check", "--manifest", fx("counter"), "--out", str(dest)], capsys)
    assert code == 0 and out == "" and "conclusion" in dest.read_text()


def test_unwritable_out(tmp_path, capsys):
    code, _, err = call(["check", "--manifest", fx("counter"),
                         "--out", str(tmp_path / "no" / "such" / "dir.txt")], capsys)
    assert code == 2 and "E-io" in err


def test_generate_and_crossval(tmp_path, capsys):
    code, out, _ = call(["generate", "--seed", "4", "--out", str(tmp_path / "g")], capsys)
    assert code == 0
    assert call(["check", "--manifest", out.strip()], capsys)[0] in (0, 1)
    code, out, _ = call(["crossval", "--count", "5", "--format", "json"], capsys)
    assert code == 0 and json.loads(out)["disagreements"] == 0


def test_raft_table_golden(raft3_comp, raft3_direct):
    got = mask_times(render_compositional(raft3_comp, raft3_direct))
    path = os.path.join(GOLDEN, "raft3_compare.txt")
    with open(path, encoding="utf-8") as fh:
        assert got == fh.read()
    for label in ("T_PreVote", "T_Vote", "T_Rep", "T_comp", "T_direct", "ratio"):
        assert re.search(rf"^{label}\s", got, re.M), label
