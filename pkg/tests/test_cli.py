"""CLI behavior through in-process main(argv) calls."""
import json

import pytest

from narravine import cli

from conftest import FIXTURES, TEST_DATA, scene_path


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def replay_args(tmp_path, scene="happy3.scene", *extra):
    return ("replay", scene_path(scene), "--out", str(tmp_path / "session")) + extra


def test_replay_happy_scene(tmp_path, capsys):
    code, out, _ = run_cli(capsys, *replay_args(tmp_path))
    assert code == 0
    report = json.loads(out)
    assert [t["outcome"] for t in report["trials"]] == ["success"] * 3
    assert report["metrics"]["success_rate"] == 1.0
    assert (tmp_path / "session" / "fsm.log").is_file()


def test_replay_trials_override(tmp_path, capsys):
    code, out, _ = run_cli(capsys, *replay_args(tmp_path, "happy3.scene", "--trials", "1"))
    assert code == 0
    report = json.loads(out)
    assert len(report["trials"]) == 1
    assert report["trials"][0]["cubes"] == ["castle", "alien", "key"]


def test_replay_with_broken_genai_fixture(tmp_path, capsys):
    code, out, _ = run_cli(
        capsys,
        *replay_args(tmp_path, "happy3.scene",
                     "--mock-genai", str(FIXTURES / "genai_narrate_down.json")))
    assert code == 0
    report = json.loads(out)
    assert {t["failure_kind"] for t in report["trials"]} == {"llm_failure"}
    assert report["metrics"]["success_rate"] == 0.0


def test_validate_config_accepts_good_file(tmp_path, capsys):
    path = tmp_path / "good.json"
    path.write_text(json.dumps({
        "trials_total": 2,
        "manifest_path": str(FIXTURES / "stickers.json"),
    }))
    code, out, _ = run_cli(capsys, "validate-config", "--config", str(path))
    assert code == 0
    assert "config ok" in out


@pytest.mark.parametrize("payload", [
    {"trials_total": -1},
    {"unknown_knob": True},
    {"genai_transport": "telepathy"},
])
def test_validate_config_rejects_bad_values(tmp_path, capsys, payload):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(payload))
    code, _, err = run_cli(capsys, "validate-config", "--config", str(path))
    assert code == 2
    assert "config error" in err


def test_validate_config_missing_file(tmp_path, capsys):
    code, _, err = run_cli(capsys, "validate-config",
                           "--config", str(tmp_path / "absent.json"))
    assert code == 2


def test_analyze_session_dir(tmp_path, capsys):
    code, _, _ = run_cli(capsys, *replay_args(tmp_path))
    assert code == 0
    capsys.readouterr()
    code, out, _ = run_cli(capsys, "analyze", str(tmp_path / "session"))
    assert code == 0
    report = json.loads(out)
    assert report["metrics"]["n_records"] == 3
    assert len(report["trials"]) == 3
    assert "questionnaires" not in report


def test_analyze_with_questionnaires(tmp_path, capsys):
    run_cli(capsys, *replay_args(tmp_path))

    sus = tmp_path / "sus.csv"
    header = ",".join("q%d" % i for i in range(1, 11))
    sus.write_text(header + "\n" + "5,1,5,1,5,1,5,1,5,1\n" * 3)
    votes = tmp_path / "votes.csv"
    votes.write_text("story,idea,none\n1,0,0\n1,1,0\n0,1,0\n")

    code, out, _ = run_cli(
        capsys, "analyze", str(tmp_path / "session"),
        "--sus", str(sus),
        "--ueq", str(TEST_DATA / "ueq_paper_pattern.csv"),
        "--votes", str(votes))
    assert code == 0
    report = json.loads(out)
    q = report["questionnaires"]
    assert q["sus"]["mean"] == 100.0
    assert q["ueq"]["Attractiveness"]["category"] == "Excellent"
    assert q["votes"]["counts"] == [2, 2, 0]


def test_analyze_empty_dir_fails(tmp_path, capsys):
    empty = tmp_path / "nothing"
    empty.mkdir()
    code, _, err = run_cli(capsys, "analyze", str(empty))
    assert code == 1
    assert "nothing to analyze" in err


def test_replay_custom_scale_and_seed(tmp_path, capsys):
    code, out, _ = run_cli(
        capsys,
        *replay_args(tmp_path, "happy3.scene", "--scale", "0.01", "--seed", "9",
                     "--trials", "1"))
    assert code == 0
    assert json.loads(out)["trials"][0]["outcome"] == "success"
