"""End-to-end orchestration: simulate/load, pre-train, extract, filter, rescue, train, report.

Every stage reads the persisted artifacts of earlier stages from the run
directory and writes its own; a stage whose output already exists is
skipped, so deleting later artifacts and re-running resumes the run.

Ground truth (true labels and corruption flags) is read only by
:func:`evaluate_filter`, the rescue audit and the final report.
"""
from __future__ import annotations

import contextlib
import csv
import fcntl
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _rng
from . import engine as E
from . import io
from .config import PipelineConfig, dump_config
from .cvnn import CVNNClassifier, Encoder, classify
from .knn_filter import Partition, filter_bank
from .label_noise import TEST, TRAIN, VAL, inject_noise, stratified_split
from .moco import extract_features, pretrain
from .rescue import run_rescue_rounds
from .sim import default_spec, synth_dataset

log = logging.getLogger(__name__)

DATASET = "dataset.seis"
MOCO_CKPT = "moco.ckpt"
MOCO_LOSSES = "moco_losses.csv"
BANK = "bank.seif"
AUDIT = "rescue_audit.json"
FINAL_CKPT = "final.ckpt"
HISTORY = "train_history.csv"
REPORT = "report.json"
REPORT_TXT = "report.txt"


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


def partition_file(round_: int) -> str:
    return f"partition_r{round_}.csv"


# --- evaluation helpers ----------------------------------------------------------

@dataclass
class FilterMetrics:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    available: bool = False
    note: str = ""


def evaluate_filter(clean_mask: np.ndarray, corrupted: np.ndarray | None) -> FilterMetrics:
    """Precision/recall/F1 of the clean set against hidden corruption flags."""
    if corrupted is None:
        return FilterMetrics(note="corruption flags unavailable")
    clean_mask = np.asarray(clean_mask, dtype=bool)
    good = ~np.asarray(corrupted, dtype=bool)
    hit = int(np.sum(clean_mask & good))
    notes = []
    if clean_mask.sum():
        precision = hit / int(clean_mask.sum())
    else:
        precision = 0.0
        notes.append("empty clean set: precision undefined, reported as 0")
    if good.sum():
        recall = hit / int(good.sum())
    else:
        recall = 0.0
        notes.append("no uncorrupted samples: recall undefined, reported as 0")
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return FilterMetrics(precision, recall, f1, True, "; ".join(notes))


def accuracy(model: E.Module, signals: np.ndarray, labels: np.ndarray, num_classes: int):
    model.eval()
    pred = classify(signals, model).argmax(axis=1) if len(signals) else np.zeros(0, dtype=int)
    labels = np.asarray(labels)
    acc = float(np.mean(pred == labels)) if len(labels) else 0.0
    per_class = [float(np.mean(pred[labels == c] == c)) if np.any(labels == c) else None
                 for c in range(num_classes)]
    return acc, per_class


def train_cvnn(signals: np.ndarray, labels: np.ndarray, train_idx: np.ndarray, val_idx: np.ndarray,
               num_classes: int, cfg: PipelineConfig, seed: int,
               encoder_state: dict | None = None):
    """Cross-entropy training of a fresh CVNN classifier.

    Returns the model (holding the selected weights) and per-epoch history.
    """
    fc = cfg.final
    train_idx = np.asarray(train_idx)
    if len(train_idx) < 2:
        raise ValueError(f"need at least two training samples, got {len(train_idx)}")
    g = _rng.rng(seed, _rng.STREAM_FINAL)
    model = CVNNClassifier(cfg.encoder, signals.shape[-1], num_classes, g, fc.hidden_dim, fc.dropout)
    if encoder_state is not None:
        model.encoder.load_state_dict(encoder_state)
    opt = E.Adam(model.parameters(), lr=fc.lr)
    history = []
    best = (-1.0, -1, None)
    for epoch in range(fc.epochs):
        model.train()
        order = train_idx[g.permutation(len(train_idx))]
        losses = []
        for s in range(0, len(order), fc.batch_size):
            b = order[s:s + fc.batch_size]
            if len(b) < 2:
                continue
            loss = E.softmax_cross_entropy(model(E.Tensor(signals[b])), labels[b])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        val_acc, _ = accuracy(model, signals[val_idx], labels[val_idx], num_classes)
        history.append({"epoch": epoch + 1, "loss": float(np.mean(losses)), "val_accuracy": val_acc})
        if fc.selection == "last" or val_acc > best[0]:
            best = (val_acc, epoch + 1, {k: v.copy() for k, v in model.state_dict().items()})
    if best[2] is not None:
        model.load_state_dict(best[2])
    model.eval()
    return model, history, best[1]


# --- run directory ---------------------------------------------------------------

@dataclass
class RunReport:
    mode: str
    seed: int
    config_hash: str
    eta: float
    test_accuracy: float
    per_class_accuracy: list
    val_accuracy: float
    selected_epoch: int
    train_size: int
    filter: dict = field(default_factory=dict)
    rescue_audit: list | None = None
    stage_seconds: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def metrics(self) -> dict:
        """Everything except wall-clock timings."""
        d = asdict(self)
        d.pop("stage_seconds")
        return d


class Run:
    def __init__(self, cfg: PipelineConfig, out_dir):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.seconds: dict[str, float] = {}

    def path(self, name: str) -> Path:
        return self.out / name

    def _stage(self, name: str, outputs: list[str], fn):
        if all(self.path(o).exists() for o in outputs):
            log.info("stage %s: reusing %s", name, ", ".join(outputs))
            return
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as exc:
            raise PipelineError(name, exc) from exc
        self.seconds[name] = time.perf_counter() - t0
        log.info("stage %s done in %.1fs", name, self.seconds[name])

    # stages ----------------------------------------------------------------

    def data(self):
        def build():
            dc = self.cfg.data
            if dc.path:
                ds = io.read_noisy(dc.path)
                io.write_noisy(self.path(DATASET), ds)
                return
            spec = default_spec(dc.num_classes, dc.samples_per_class, dc.signal_length, dc.seed,
                                dc.fading_coeff_std, dc.snr_db)
            clean = synth_dataset(spec)
            clean = clean.with_split(stratified_split(clean.labels, dc.split_ratios, dc.seed))
            noise_seed = dc.seed if dc.noise_seed is None else dc.noise_seed
            io.write_noisy(self.path(DATASET), inject_noise(clean, dc.eta, noise_seed))

        self._stage("data", [DATASET], build)

    def dataset(self):
        return io.read_noisy(self.path(DATASET))

    def pretrain(self):
        def build():
            ds = self.dataset()
            tr = ds.indices(TRAIN)
            res = pretrain(ds.signals[tr], self.cfg.augment, self.cfg.encoder, self.cfg.moco, self.cfg.seed)
            arch = {"kind": "encoder", "encoder": asdict(self.cfg.encoder),
                    "signal_length": int(ds.signals.shape[-1])}
            E.save_checkpoint(self.path(MOCO_CKPT), res.encoder.state_dict(), arch)
            with open(self.path(MOCO_LOSSES), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["epoch", "loss"])
                for i, l in enumerate(res.epoch_losses):
                    w.writerow([i + 1, repr(l)])

        self._stage("pretrain", [MOCO_CKPT, MOCO_LOSSES], build)

    def load_encoder(self) -> Encoder:
        state, arch = E.load_checkpoint(self.path(MOCO_CKPT))
        return load_encoder(state, arch)

    def extract(self):
        def build():
            ds = self.dataset()
            tr = ds.indices(TRAIN)
            bank = extract_features(self.load_encoder(), ds.signals[tr], tr)
            io.write_bank(self.path(BANK), bank)

        self._stage("extract", [BANK], build)

    def filter(self):
        def build():
            ds = self.dataset()
            bank = io.read_bank(self.path(BANK))
            labels = ds.observed_labels[bank.indices]
            kc = self.cfg.knn
            part, rep = filter_bank(bank.features, labels, kc.k, kc.theta, kc.n_min)
            io.write_partition(self.path(partition_file(0)), bank.indices, rep.scores,
                               part.clean_mask(), 0)

        self._stage("filter", [partition_file(0)], build)

    def rescue(self):
        rounds = self.cfg.rescue.rounds
        outputs = [partition_file(r) for r in range(1, rounds + 1)] + [AUDIT]

        def build():
            ds = self.dataset()
            bank = io.read_bank(self.path(BANK))
            idx, scores, clean, _ = io.read_partition(self.path(partition_file(0)))
            if not np.array_equal(idx, bank.indices):
                raise ValueError("partition rows do not align with the feature bank")
            labels = ds.observed_labels[bank.indices]
            res = run_rescue_rounds(bank.features, labels, Partition.from_mask(clean, 0),
                                    ds.num_classes, self.cfg.rescue, self.cfg.seed)
            for p in res.rounds:
                io.write_partition(self.path(partition_file(p.round)), idx, scores,
                                   p.clean_mask(), p.round)
            io.write_json(self.path(AUDIT), {"rounds": res.audit()})

        self._stage("rescue", outputs, build)

    def final_partition(self) -> str | None:
        if self.cfg.mode == "baseline":
            return None
        if self.cfg.mode == "no_rescue":
            return partition_file(0)
        return partition_file(self.cfg.rescue.rounds)

    def train(self):
        def build():
            ds = self.dataset()
            part = self.final_partition()
            if part is None:
                train_idx = ds.indices(TRAIN)
            else:
                idx, _, clean, _ = io.read_partition(self.path(part))
                train_idx = idx[clean]
            enc_state = None
            if self.cfg.final.init_from_moco:
                enc_state, _ = E.load_checkpoint(self.path(MOCO_CKPT))
            model, history, selected = train_cvnn(
                ds.signals, ds.observed_labels, train_idx, ds.indices(VAL), ds.num_classes,
                self.cfg, self.cfg.seed, enc_state)
            E.save_checkpoint(self.path(FINAL_CKPT), model.state_dict(), model.arch)
            with open(self.path(HISTORY), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["epoch", "loss", "val_accuracy", "selected"])
                for h in history:
                    w.writerow([h["epoch"], repr(h["loss"]), repr(h["val_accuracy"]),
                                int(h["epoch"] == selected)])

        self._stage("train", [FINAL_CKPT, HISTORY], build)

    def report(self) -> RunReport:
        ds = self.dataset()
        state, arch = E.load_checkpoint(self.path(FINAL_CKPT))
        model = load_classifier(state, arch)
        te, va = ds.indices(TEST), ds.indices(VAL)
        test_acc, per_class = accuracy(model, ds.signals[te], ds.observed_labels[te], ds.num_classes)
        val_acc, _ = accuracy(model, ds.signals[va], ds.observed_labels[va], ds.num_classes)
        hist = list(csv.DictReader(self.path(HISTORY).open()))
        selected = next((int(h["epoch"]) for h in hist if h["selected"] == "1"), 0)
        truth = ds.ground_truth()
        tr = ds.indices(TRAIN)
        part = self.final_partition()
        filt, audit = {}, None
        if part is None:
            train_size = len(tr)
        else:
            idx, _, clean, _ = io.read_partition(self.path(part))
            train_size = int(clean.sum())
            corr = truth.corrupted[idx] if truth is not None else None
            filt = {"initial": asdict(evaluate_filter(io.read_partition(self.path(partition_file(0)))[2], corr)),
                    "final": asdict(evaluate_filter(clean, corr))}
            if self.cfg.mode == "full":
                audit = self.rescue_audit(corr)
        cfg_dict = self.cfg.to_dict()
        rep = RunReport(self.cfg.mode, self.cfg.seed, self.cfg.digest(), float(ds.noise_rate),
                        test_acc, per_class, val_acc, selected, train_size, filt, audit,
                        dict(self.seconds), cfg_dict)
        io.write_json(self.path(REPORT), asdict(rep))
        self.path(REPORT_TXT).write_text(format_report(rep))
        self.path("config.yaml").write_text(dump_config(self.cfg))
        return rep

    def rescue_audit(self, corrupted: np.ndarray | None) -> list[dict]:
        """Per-round audit, with the number of truly corrupted rescues when flags exist."""
        rounds = io.read_json(self.path(AUDIT))["rounds"]
        prev = io.read_partition(self.path(partition_file(0)))[2]
        out = []
        for entry in rounds:
            cur = io.read_partition(self.path(partition_file(entry["round"])))[2]
            moved = cur & ~prev
            entry = dict(entry)
            entry["rescued_corrupted"] = int(np.sum(corrupted[moved])) if corrupted is not None else None
            out.append(entry)
            prev = cur
        return out


def load_encoder(state: dict, arch: dict) -> Encoder:
    from .cvnn import EncoderConfig
    enc = Encoder(EncoderConfig(**arch["encoder"]), arch["signal_length"], np.random.default_rng(0))
    enc.load_state_dict({k: v for k, v in state.items()})
    return enc.eval()


def load_classifier(state: dict, arch: dict) -> CVNNClassifier:
    from .cvnn import EncoderConfig
    model = CVNNClassifier(EncoderConfig(**arch["encoder"]), arch["signal_length"], arch["num_classes"],
                           np.random.default_rng(0), arch["hidden_dim"], arch["dropout"])
    model.load_state_dict(state)
    return model.eval()


@contextlib.contextmanager
def locked(out_dir):
    """Exclusive lock on a run directory; a second process fails fast."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / ".lock", "w") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise RuntimeError(f"{out} is in use by another process") from None
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def run_pipeline(cfg: PipelineConfig, out_dir) -> RunReport:
    """All stages for ``cfg.mode`` (``full``, ``no_rescue`` or ``baseline``)."""
    with locked(out_dir):
        run = Run(cfg, out_dir)
        run.data()
        if cfg.mode != "baseline":
            run.pretrain()
            run.extract()
            run.filter()
            if cfg.mode == "full":
                run.rescue()
        run.train()
        return run.report()


def run_baseline_ce(cfg: PipelineConfig, out_dir) -> RunReport:
    """Plain cross-entropy on the full noisy train split, same network and report."""
    return run_pipeline(cfg.replace(mode="baseline"), out_dir)


# --- text rendering ------------------------------------------------------------

METHOD_NAMES = {"baseline": "CE", "no_rescue": "w/o Rescue", "full": "Full pipeline"}


def format_report(rep: RunReport) -> str:
    lines = [f"mode: {METHOD_NAMES.get(rep.mode, rep.mode)}   seed: {rep.seed}   eta: {rep.eta:.2f}   "
             f"config: {rep.config_hash}",
             f"test accuracy: {100 * rep.test_accuracy:.2f}%   (val {100 * rep.val_accuracy:.2f}%, "
             f"epoch {rep.selected_epoch}, {rep.train_size} training samples)",
             "per-class: " + "  ".join("n/a" if a is None else f"{100 * a:.1f}" for a in rep.per_class_accuracy)]
    for stage, fm in rep.filter.items():
        if fm.get("available"):
            lines.append(f"filter ({stage}): precision {fm['precision']:.3f}  recall {fm['recall']:.3f}  "
                         f"F1 {fm['f1']:.3f}")
        else:
            lines.append(f"filter ({stage}): unavailable ({fm.get('note')})")
    for r in rep.rescue_audit or []:
        lines.append(f"rescue round {r['round']}: rescued {r['rescued']} (high {r['high_conf']}, "
                     f"proto {r['low_conf_sim']}), truly corrupted {r['rescued_corrupted']}")
    if rep.stage_seconds:
        lines.append("wall-clock: " + ", ".join(f"{k} {v:.1f}s" for k, v in rep.stage_seconds.items()))
    return "\n".join(lines) + "\n"


def accuracy_table(reports: list[dict]) -> str:
    """Method x noise-rate table of mean test accuracy (%) over seeds."""
    etas = sorted({round(r["eta"], 4) for r in reports})
    methods = [m for m in ("baseline", "no_rescue", "full") if any(r["mode"] == m for r in reports)]
    head = f"{'Method':<16}" + "".join(f"{'eta=' + format(e, '.1f'):>11}" for e in etas)
    rows = [head, "-" * len(head)]
    for m in methods:
        cells = []
        for e in etas:
            accs = [r["test_accuracy"] for r in reports if r["mode"] == m and round(r["eta"], 4) == e]
            cells.append(f"{100 * np.mean(accs):>11.2f}" if accs else f"{'-':>11}")
        rows.append(f"{METHOD_NAMES[m]:<16}" + "".join(cells))
    return "\n".join(rows) + "\n"
