"""
End-to-end command line tests on tiny datasets
"""

import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

import json

import pytest

from hopgate.checkpoint import load_checkpoint
from hopgate.cli import main
from hopgate.evaluation import load_report
from hopgate.gate import GateMode, load_gate_config
from hopgate.pruning import FcOrigin
from hopgate.state import Variant

NAMES = ["mary", "john", "sandra", "daniel"]
PLACES = ["garden", "kitchen", "office", "bedroom", "hallway"]


def _task_text(n_stories: int, offset: int) -> str:
    lines = []
    for i in range(n_stories):
        a = NAMES[(i + offset) % len(NAMES)]
        b = NAMES[(i + offset + 1) % len(NAMES)]
        pa = PLACES[(i + offset) % len(PLACES)]
        pb = PLACES[(i + offset + 2) % len(PLACES)]
        lines += [
            f"1 {a.title()} went to the {pa}.",
            f"2 {b.title()} moved to the {pb}.",
            f"3 Where is {a.title()}?\t{pa}\t1",
            f"4 {a.title()} journeyed to the {pb}.",
            f"5 Where is {a.title()}?\t{pb}\t4",
        ]
    return "\n".join(lines) + "\n"


@pytest.fixture
def babi_dir(tmp_path):
    data = tmp_path / "en"
    data.mkdir()
    (data / "qa1_single-supporting-fact_train.txt").write_text(_task_text(10, 0), encoding="utf-8")
    (data / "qa1_single-supporting-fact_test.txt").write_text(_task_text(4, 1), encoding="utf-8")
    return data


def test_babi_pipeline(tmp_path, babi_dir, capsys):
    ckpt = str(tmp_path / "model.ckpt.json")
    common = ["--data", str(babi_dir), "--tasks", "1", "--checkpoint", ckpt]

    assert main(["summary", *common]) == 0
    summary = json.loads(capsys.readouterr().out.splitlines()[0])
    assert summary["task_id"] == 1 and summary["n_samples"] == 20

    assert main(["train", *common, "--d", "8", "--n-s", "6", "--hops", "2", "--l1", "8", "--epochs", "2"]) == 0
    bundle = load_checkpoint(ckpt)
    assert bundle.hyper.n_s == 6 and bundle.hyper.m == 2
    assert bundle.weights.W_E is None

    assert main(["eval", *common, "--out", str(tmp_path / "nope")]) == 1, "eval needs a trained ICN"

    assert main(["fce", *common, "--epochs", "2"]) == 0
    assert main(["icn", *common, "--epochs", "2"]) == 0
    gate_path = tmp_path / "gate.json"
    assert main(["calibrate", *common, "--scenario", "pertask", "--out", str(gate_path)]) == 0
    assert load_gate_config(gate_path).mode == GateMode.PER_TASK

    out = tmp_path / "reports"
    assert main(["eval", *common, "--preset", "reference_pertask_babi", "--out", str(out)]) == 0
    report = load_report(out / "report.json")
    assert report.scenario == "pertask"
    assert report.pooled.n_queries == 8
    assert (out / "report.csv").exists() and (out / "cost_table.csv").exists()

    interactive = tmp_path / "interactive"
    assert main(["eval", *common, "--mode", "interactive", "--theta-zs", "0.01", "--avoid-reembed",
                 "--out", str(interactive)]) == 0
    assert load_report(interactive / "report.json").mode.value == "interactive"


def test_key_value_pipeline(tmp_path, capsys):
    ckpt = str(tmp_path / "kv.ckpt.json")
    common = ["--checkpoint", ckpt, "--seed", "3"]

    assert main(["train", *common, "--variant", "keyvalue", "--kv-pairs", "12", "--vocab-size", "20",
                 "--n-w", "3", "--d", "6", "--l1", "8", "--epochs", "2"]) == 0
    bundle = load_checkpoint(ckpt)
    assert bundle.hyper.variant == Variant.KEY_VALUE
    assert bundle.hyper.m == 2 and bundle.hyper.n_s == 12

    labels = tmp_path / "labels.json"
    assert main(["fce", *common, "--epochs", "2"]) == 0
    assert main(["label", *common, "--out", str(labels)]) == 0
    assert len(json.loads(labels.read_text())) == 12
    assert main(["icn", *common, "--labels", str(labels), "--epochs", "2"]) == 0
    gate_path = tmp_path / "gate.json"
    assert main(["calibrate", *common, "--scenario", "global", "--out", str(gate_path)]) == 0

    hard = tmp_path / "hard"
    assert main(["eval", *common, "--force-route", "hard", "--out", str(hard)]) == 0
    pooled = load_report(hard / "report.json").pooled
    assert pooled.accuracy_adaptive == pooled.accuracy_baseline
    assert pooled.zeta_e == 0.0

    assert main(["prune", *common]) == 0
    assert set(load_checkpoint(ckpt).pruned) == {FcOrigin.W, FcOrigin.W_E}

    out = tmp_path / "reports"
    assert main(["eval", *common, "--gate-config", str(gate_path), "--theta-zs", "0.01", "--out", str(out)]) == 0
    bench = tmp_path / "bench.json"
    assert main(["bench", *common, "--repeat", "1", "--inflate-ns", "24", "--limit", "4", "--out", str(bench)]) == 0
    assert json.loads(bench.read_text())["n_s"] == 24

    table = tmp_path / "cost.csv"
    assert main(["report", "--report", str(out / "report.json"), "--out", str(table)]) == 0
    assert table.read_text().startswith("task,mode,scenario")


def test_invalid_task_list():
    with pytest.raises(SystemExit):
        main(["summary", "--tasks", "0,21"])


def test_missing_data_dir(tmp_path):
    assert main(["summary", "--data", str(tmp_path / "missing"), "--tasks", "1"]) == 1


def test_later_commands_reuse_training_tasks(tmp_path, babi_dir):
    """Test that commands after train default to the tasks stored in the checkpoint"""
    ckpt = str(tmp_path / "model.ckpt.json")
    base = ["--data", str(babi_dir), "--checkpoint", ckpt]

    assert main(["train", *base, "--tasks", "1", "--d", "8", "--n-s", "6", "--hops", "2", "--epochs", "1"]) == 0
    assert load_checkpoint(ckpt).tasks == [1]

    assert main(["fce", *base, "--epochs", "1"]) == 0
    assert main(["icn", *base, "--epochs", "1"]) == 0
    out = tmp_path / "reports"
    assert main(["eval", *base, "--scenario", "nc", "--out", str(out)]) == 0
    assert [t.task_id for t in load_report(out / "report.json").tasks] == [1]
