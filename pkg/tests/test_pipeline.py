import ast
import json
import multiprocessing as mp
from pathlib import Path

import numpy as np
import pytest

import noisy_sei
from noisy_sei import io
from noisy_sei import pipeline as P
from noisy_sei.config import PipelineConfig, dump_config, from_dict, load_config

TINY = PipelineConfig().replace(
    data={"num_classes": 3, "samples_per_class": 30, "signal_length": 32, "eta": 0.3},
    encoder={"num_blocks": 2, "filters": 2, "kernel_len": 3, "embed_dim": 8},
    moco={"proj_dim": 8, "queue_size": 16, "epochs": 2, "batch_size": 16},
    knn={"k": 5, "n_min": 3},
    rescue={"epochs": 5, "lr": 1e-2},
    final={"epochs": 3, "hidden_dim": 8, "batch_size": 16},
)


# --- evaluate_filter ------------------------------------------------------------

def test_filter_metrics_hand_built():
    clean = np.array([1, 1, 1, 1, 1, 1, 0, 0, 0, 0], dtype=bool)
    corrupted = np.array([0, 0, 0, 0, 0, 1, 0, 1, 1, 0], dtype=bool)
    m = P.evaluate_filter(clean, corrupted)
    # 5 of 6 clean are uncorrupted; 7 uncorrupted in total
    assert m.precision == pytest.approx(5 / 6)
    assert m.recall == pytest.approx(5 / 7)
    assert m.f1 == pytest.approx(2 * (5 / 6) * (5 / 7) / (5 / 6 + 5 / 7))
    assert m.available


def test_filter_metrics_perfect_and_degenerate():
    corrupted = np.array([0, 1, 0, 1], dtype=bool)
    m = P.evaluate_filter(~corrupted, corrupted)
    assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)
    e = P.evaluate_filter(np.zeros(4, dtype=bool), corrupted)
    assert e.precision == 0.0 and e.available and "empty" in e.note
    u = P.evaluate_filter(~corrupted, None)
    assert not u.available and "unavailable" in u.note


# --- config ---------------------------------------------------------------------

def test_shipped_configs():
    assert load_config("desk") == PipelineConfig()
    full = load_config("fullscale")
    assert full.moco.lr == 5e-4 and full.moco.queue_size == 512 and full.moco.epochs == 300
    assert full.final.epochs == 100 and full.final.batch_size == 256
    assert full.knn.k == 20 and full.knn.n_min == 35 and full.rescue.rounds == 3


def test_config_roundtrip_and_digest(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(TINY))
    assert load_config(p) == TINY
    assert TINY.digest() == load_config(p).digest()
    assert TINY.digest() != TINY.replace(seed=1).digest()


def test_config_errors():
    with pytest.raises(KeyError):
        from_dict({"bogus": {}})
    with pytest.raises(KeyError):
        TINY.replace(knn={"kk": 3})
    with pytest.raises(ValueError):
        TINY.replace(mode="other")
    with pytest.raises(ValueError):
        TINY.replace(final={"selection": "first"})


# --- end to end -----------------------------------------------------------------

@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("full")
    return out, P.run_pipeline(TINY, out)


def test_full_run_artifacts(full_run):
    out, rep = full_run
    for name in (P.DATASET, P.MOCO_CKPT, P.MOCO_LOSSES, P.BANK, P.AUDIT, P.FINAL_CKPT, P.HISTORY,
                 P.REPORT, P.REPORT_TXT, "config.yaml", *(P.partition_file(r) for r in range(4))):
        assert (out / name).exists(), name
    assert load_config(out / "config.yaml") == TINY
    assert rep.config_hash == TINY.digest()
    assert rep.eta == pytest.approx(np.floor(0.3 * 54) / 54)
    assert 0 <= rep.test_accuracy <= 1 and len(rep.per_class_accuracy) == 3
    assert rep.filter["initial"]["available"] and rep.filter["final"]["available"]
    assert [r["round"] for r in rep.rescue_audit] == [1, 2, 3]
    assert all(r["rescued_corrupted"] is not None for r in rep.rescue_audit)
    assert set(rep.stage_seconds) >= {"data", "pretrain", "extract", "filter", "rescue", "train"}
    saved = io.read_json(out / P.REPORT)
    assert all(saved[k] is not None for k in saved if k != "rescue_audit")


def test_full_run_partitions_monotone(full_run):
    out, rep = full_run
    masks = [io.read_partition(out / P.partition_file(r))[2] for r in range(4)]
    for a, b in zip(masks, masks[1:]):
        assert not np.any(a & ~b)
    assert rep.train_size == int(masks[-1].sum())


def test_resume_after_deleting_later_artifacts(full_run, tmp_path):
    out, rep = full_run
    import shutil
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    for name in (P.FINAL_CKPT, P.HISTORY, P.REPORT, P.AUDIT, P.partition_file(3)):
        (copy / name).unlink()
    bank_bytes = (copy / P.BANK).read_bytes()
    again = P.run_pipeline(TINY, copy)
    assert (copy / P.BANK).read_bytes() == bank_bytes
    assert set(again.stage_seconds) == {"rescue", "train"}
    assert again.metrics() == rep.metrics()


def test_same_seed_identical_metrics(full_run, tmp_path):
    _, rep = full_run
    assert P.run_pipeline(TINY, tmp_path).metrics() == rep.metrics()


def test_no_rescue_uses_round_zero(tmp_path):
    rep = P.run_pipeline(TINY.replace(mode="no_rescue"), tmp_path)
    assert not (tmp_path / P.AUDIT).exists() and not (tmp_path / P.partition_file(1)).exists()
    assert rep.train_size == int(io.read_partition(tmp_path / P.partition_file(0))[2].sum())
    assert rep.rescue_audit is None


def test_baseline_schema_matches(full_run, tmp_path):
    _, rep = full_run
    base = P.run_baseline_ce(TINY, tmp_path)
    assert base.mode == "baseline"
    assert set(io.read_json(tmp_path / P.REPORT)) == set(io.read_json(full_run[0] / P.REPORT))
    assert base.train_size == 54
    assert not (tmp_path / P.BANK).exists()


def test_stage_failure_names_stage(tmp_path):
    bad = TINY.replace(data={"signal_length": 30})  # not divisible by 2**num_blocks
    with pytest.raises(P.PipelineError, match="stage 'pretrain'"):
        P.run_pipeline(bad, tmp_path)
    assert (tmp_path / P.DATASET).exists()


def _hold_lock(path, ready, release):
    with P.locked(path):
        ready.set()
        release.wait(10)


def test_run_directory_lock(tmp_path):
    ctx = mp.get_context("fork")
    ready, release = ctx.Event(), ctx.Event()
    proc = ctx.Process(target=_hold_lock, args=(tmp_path, ready, release))
    proc.start()
    try:
        assert ready.wait(10)
        with pytest.raises(RuntimeError, match="in use"):
            with P.locked(tmp_path):
                pass
    finally:
        release.set()
        proc.join()
    with P.locked(tmp_path):
        pass


def test_accuracy_table_layout():
    reports = [{"mode": m, "eta": e, "test_accuracy": a}
               for m, e, a in [("baseline", 0.0, 0.9), ("baseline", 0.4, 0.6), ("baseline", 0.4, 0.7),
                               ("full", 0.0, 0.95), ("full", 0.4, 0.85)]]
    lines = P.accuracy_table(reports).splitlines()
    assert lines[0].split() == ["Method", "eta=0.0", "eta=0.4"]
    assert lines[2].split() == ["CE", "90.00", "65.00"]
    assert lines[3].split() == ["Full", "pipeline", "95.00", "85.00"]


# --- evaluation-only use of hidden flags ----------------------------------------

FLAG_NAMES = {"corrupted", "true_labels", "ground_truth"}
# functions allowed to touch hidden flags: reporting, auditing and file plumbing
ALLOWED = {"evaluate_filter", "report", "rescue_audit", "audit_corruption", "cmd_inject_noise",
           "format_report"}
PLUMBING = {"io.py", "label_noise.py"}


def _flag_uses(tree):
    uses = []

    def visit(node, func):
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            func = node.name
        name = node.attr if isinstance(node, ast.Attribute) else node.id if isinstance(node, ast.Name) else \
            node.arg if isinstance(node, ast.arg) else None
        if name in FLAG_NAMES:
            uses.append((func, name, node.lineno))
        for child in ast.iter_child_nodes(node):
            visit(child, func)

    visit(tree, None)
    return uses


def test_flags_only_reach_evaluation_code():
    src = Path(noisy_sei.__file__).parent
    offenders = []
    for f in sorted(src.glob("*.py")):
        if f.name in PLUMBING:
            continue
        for func, name, line in _flag_uses(ast.parse(f.read_text())):
            if func not in ALLOWED:
                offenders.append(f"{f.name}:{line} {name} in {func}")
    assert not offenders, offenders


def test_decisions_ignore_flags(tmp_path):
    """Scrambling the flags sidecar changes evaluation numbers only, never the partitions."""
    a = tmp_path / "a"
    P.run_pipeline(TINY.replace(final={"epochs": 1}), a)
    ds = io.read_noisy(a / P.DATASET)
    src = tmp_path / "scrambled.seis"
    truth = ds.ground_truth()
    fake = type(truth)(truth.true_labels[::-1].copy(), truth.corrupted[::-1].copy())
    io.write_seis(src, ds.signals, ds.observed_labels, ds.num_classes, ds.split)
    io.write_flags(f"{src}.flags.csv", fake, ds.observed_labels)
    b = tmp_path / "b"
    P.run_pipeline(TINY.replace(final={"epochs": 1}, data={"path": str(src)}), b)
    for r in range(4):
        assert io.read_partition(a / P.partition_file(r))[2].tolist() == \
            io.read_partition(b / P.partition_file(r))[2].tolist()
