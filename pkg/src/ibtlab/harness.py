"""Experiment configs, multi-seed runs, run directories and static SVG plots."""
from __future__ import annotations

import csv
import json
import logging
import statistics
import time
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from pathlib import Path

import numpy as np

from .curriculum import CurriculumSpec, evaluate_per_curriculum, run_cibt, write_curriculum_csv
from .data import (
    MONO_SETTINGS, SPLITS, ConfigError, Vocab, build_mono_setting, build_split, dataset_from_files,
    scan_generate_all, scan_interpret,
)
from .metrics import corpus_bleu, exact_match_accuracy, perturbation_stats, track_quality, write_curve_csv
from .model import DIRECTIONS, ModelConfig, Seq2Seq
from .training import IbtConfig, TrainingRun, run_bt, run_bt_otf, run_ibt, train_supervised, write_log_csv

log = logging.getLogger(__name__)

METHODS = ("baseline", "bt", "bt_otf", "ibt", "cibt")


class PlotError(ValueError):
    pass


# ---------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    """One experiment: a task, a method and the seeds to run it under.

    ``task`` is a SCAN split name or a mapping with ``train``/``test`` (and
    optionally ``dev``, ``format``) file paths. ``model`` holds a ``preset`` name
    plus ModelConfig overrides; ``ibt`` holds IbtConfig fields (the seed comes
    from ``seeds``); ``curriculum`` holds CurriculumSpec fields.
    """
    task: object
    method: str
    mono: str | None = None
    model: dict = field(default_factory=lambda: {"preset": "desk"})
    ibt: dict = field(default_factory=dict)
    curriculum: dict | None = None
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    direction: str = "src2trg"  # the model BT / BT+OTF trains
    data_seed: int = 0
    output_dir: str = "runs"
    name: str | None = None
    checkpoints: bool = True
    plots: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method: expected one of {METHODS}, got {self.method!r}")
        if isinstance(self.task, str):
            if self.task not in SPLITS:
                raise ConfigError(f"task: unknown SCAN split {self.task!r} (expected one of {SPLITS})")
        elif isinstance(self.task, dict):
            missing = {"train", "test"} - set(self.task)
            if missing:
                raise ConfigError(f"task: file task needs {sorted(missing)}")
            extra = set(self.task) - {"train", "test", "dev", "format", "name"}
            if extra:
                raise ConfigError(f"task: unknown keys {sorted(extra)}")
        else:
            raise ConfigError("task: expected a split name or a mapping of file paths")
        if self.method == "baseline":
            if self.mono is not None and self.mono not in MONO_SETTINGS:
                raise ConfigError(f"mono: unknown setting {self.mono!r}")
        elif self.mono not in MONO_SETTINGS:
            raise ConfigError(f"mono: method {self.method} needs one of {MONO_SETTINGS}, got {self.mono!r}")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction: expected one of {DIRECTIONS}")
        if not isinstance(self.seeds, list) or not self.seeds:
            raise ConfigError("seeds: expected a non-empty list")
        if not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise ConfigError("seeds: expected non-negative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds: duplicates in {self.seeds}")
        if self.method == "cibt" and self.curriculum is None:
            raise ConfigError("curriculum: method cibt needs a curriculum section")
        # build everything once so a bad field fails before any compute
        self.model_config()
        self.ibt_config(self.seeds[0])
        if self.curriculum is not None:
            self.curriculum_spec()

    def model_config(self):
        opts = dict(self.model)
        preset = opts.pop("preset", "desk")
        known = {f.name for f in fields(ModelConfig)}
        unknown = set(opts) - known
        if unknown:
            raise ConfigError(f"model: unknown fields {sorted(unknown)}")
        return ModelConfig.preset(preset, **opts)

    def curriculum_spec(self):
        unknown = set(self.curriculum) - {f.name for f in fields(CurriculumSpec)}
        if unknown:
            raise ConfigError(f"curriculum: unknown fields {sorted(unknown)}")
        return CurriculumSpec(**self.curriculum)

    def ibt_config(self, seed):
        opts = dict(self.ibt)
        unknown = set(opts) - ({f.name for f in fields(IbtConfig)} - {"seed"})
        if unknown:
            raise ConfigError(f"ibt: unknown fields {sorted(unknown)}")
        if self.method == "cibt":
            # K supervised steps, then the whole curriculum budget
            total = opts.get("K", IbtConfig.K) + self.curriculum_spec().total_budget
            if opts.setdefault("total_iterations", total) != total:
                raise ConfigError(f"ibt.total_iterations must equal K + curriculum.total_budget = {total}")
        return IbtConfig(**opts, seed=seed)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config: expected a mapping at the top level")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"config: unknown fields {sorted(unknown)}")
        for required in ("task", "method"):
            if required not in d:
                raise ConfigError(f"config: missing required field {required!r}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"config: {e}") from e

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"{path}: no such config file")
        text = path.read_text(encoding="utf-8")
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{e.lineno}: {e.msg}") from e
        return cls.from_dict(d)

    def resolved(self):
        """Every default filled in; what gets snapshotted into the run directory."""
        out = asdict(self)
        out["model"] = {"preset": self.model.get("preset", "desk"), **asdict(self.model_config())}
        ibt = asdict(self.ibt_config(self.seeds[0]))
        ibt.pop("seed")
        out["ibt"] = ibt
        if self.curriculum is not None:
            out["curriculum"] = asdict(self.curriculum_spec())
        return out


# ---------------------------------------------------------------- report

@dataclass
class RunReport:
    run_dir: str
    method: str
    accuracies: dict  # seed -> src2trg test exact-match accuracy
    mean: float
    std: float | None  # sample standard deviation; None for a single seed
    bleu: dict = field(default_factory=dict)  # seed -> trg2src test BLEU, when trained
    curve_paths: list = field(default_factory=list)
    checkpoint_paths: list = field(default_factory=list)
    plot_paths: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @staticmethod
    def aggregate(values):
        values = list(values)
        mean = statistics.fmean(values)
        return mean, (statistics.stdev(values) if len(values) > 1 else None)

    def to_json(self):
        d = asdict(self)
        d["accuracies"] = {str(k): v for k, v in self.accuracies.items()}
        d["bleu"] = {str(k): v for k, v in self.bleu.items()}
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["accuracies"] = {int(k): v for k, v in d["accuracies"].items()}
        d["bleu"] = {int(k): v for k, v in d["bleu"].items()}
        return cls(**d)

    def summary(self):
        sd = "n/a" if self.std is None else f"{100 * self.std:.1f}"
        return f"{self.method}: {100 * self.mean:.1f} ± {sd} over seeds {sorted(self.accuracies)}"


# ---------------------------------------------------------------- running

def load_task(cfg):
    if isinstance(cfg.task, str):
        return build_split(scan_generate_all(), cfg.task, np.random.default_rng(cfg.data_seed))
    t = cfg.task
    for key in ("train", "test", "dev"):
        if key in t and not Path(t[key]).is_file():
            raise FileNotFoundError(f"task.{key}: no such file: {t[key]}")
    return dataset_from_files(t.get("name", "files"), t["train"], t["test"], t.get("dev"),
                              np.random.default_rng(cfg.data_seed), t.get("format"))


def _new_run_dir(cfg):
    base = Path(cfg.output_dir)
    stem = f"{cfg.name or cfg.method}-{datetime.now():%Y%m%d-%H%M%S}"
    run_dir, k = base / stem, 1
    while run_dir.exists():
        k += 1
        run_dir = base / f"{stem}-{k}"
    run_dir.mkdir(parents=True)
    return run_dir


def run_seed(cfg, data, seed, seed_dir=None):
    """Train and evaluate one seed; returns a dict of results (and writes files
    under ``seed_dir`` when given)."""
    mc = cfg.model_config()
    ic = cfg.ibt_config(seed)
    mono = None
    if cfg.method != "baseline":
        mono = build_mono_setting(data.dev, data.test, cfg.mono, np.random.default_rng([cfg.data_seed, seed, 1]))
    src_seqs = [p.source for p in data.train] + (mono.src_side if mono else [])
    trg_seqs = [p.target for p in data.train] + (mono.trg_side if mono else [])
    sv, tv = Vocab.build(src_seqs), Vocab.build(trg_seqs)
    m_fwd = Seq2Seq(mc, sv, tv, "src2trg", rng=np.random.default_rng([seed, 2]))
    m_bwd = None if cfg.method == "baseline" else Seq2Seq(mc, tv, sv, "trg2src", rng=np.random.default_rng([seed, 3]))

    run = TrainingRun(m_fwd, m_bwd, data.train, ic, mono)
    if mono is not None and ic.track_every:
        oracle = scan_interpret if isinstance(cfg.task, str) else None
        run.tracker = lambda step: track_quality(m_fwd, m_bwd, mono, step, oracle)

    if cfg.method == "baseline":
        train_supervised(m_fwd, data.train, ic, run=run)
    elif cfg.method == "ibt":
        run_ibt(m_fwd, m_bwd, data.train, mono, ic, run=run)
    elif cfg.method == "bt":
        run_bt(cfg.direction, m_fwd, m_bwd, data.train, mono, ic, run=run)
    elif cfg.method == "bt_otf":
        run_bt_otf(cfg.direction, m_fwd, m_bwd, data.train, mono, ic, run=run)
    else:
        run_cibt(m_fwd, m_bwd, data.train, mono, cfg.curriculum_spec(), ic, run=run)

    preds = m_fwd.translate([p.source for p in data.test])
    result = {"seed": seed, "accuracy": exact_match_accuracy(preds, [p.target for p in data.test]),
              "bleu": None, "steps": run.step, "curve": [asdict(p) for p in run.curve]}
    if m_bwd is not None:
        back = m_bwd.translate([p.target for p in data.test])
        result["bleu"] = corpus_bleu(back, [p.source for p in data.test])
    if run.generations:
        result["perturbation_mean"] = perturbation_stats(run.generations).mean
    if cfg.curriculum is not None:
        spec = cfg.curriculum_spec()
        result["curriculum"] = evaluate_per_curriculum(m_fwd, data.test, spec.strategy, spec.n, predictions=preds)

    if seed_dir is not None:
        seed_dir.mkdir(parents=True, exist_ok=True)
        write_log_csv(run.log, seed_dir / "log.csv")
        if run.curve:
            write_curve_csv(run.curve, seed_dir / "curve.csv")
            result["curve_path"] = str(seed_dir / "curve.csv")
        if "curriculum" in result:
            write_curriculum_csv(result["curriculum"], seed_dir / "curriculum.csv")
        with open(seed_dir / "predictions.tsv", "w", encoding="utf-8") as f:
            for p, y in zip(data.test, preds):
                f.write(f"{' '.join(p.source)}\t{' '.join(p.target)}\t{' '.join(y)}\n")
        if cfg.checkpoints:
            result["checkpoints"] = []
            for m in (m_fwd, m_bwd):
                if m is not None:
                    path = seed_dir / f"{m.direction}.npz"
                    m.save(path)
                    result["checkpoints"].append(str(path))
        (seed_dir / "result.json").write_text(json.dumps(result, indent=2, sort_keys=True), encoding="utf-8")
    return result


def run_experiment(cfg):
    """Run every seed of ``cfg`` into a fresh timestamped directory."""
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    data = load_task(cfg)
    run_dir = _new_run_dir(cfg)
    (run_dir / "config.json").write_text(json.dumps(cfg.resolved(), indent=2, sort_keys=True), encoding="utf-8")
    handler = logging.FileHandler(run_dir / "run.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    root = logging.getLogger("ibtlab")
    root.addHandler(handler)
    t0 = time.perf_counter()
    try:
        results = []
        for seed in cfg.seeds:
            log.info("seed %d: %s on %s", seed, cfg.method, data.name)
            res = run_seed(cfg, data, seed, run_dir / f"seed{seed}")
            log.info("seed %d: accuracy %.4f", seed, res["accuracy"])
            results.append(res)
    finally:
        root.removeHandler(handler)
        handler.close()
    accs = {r["seed"]: r["accuracy"] for r in results}
    mean, std = RunReport.aggregate(accs.values())
    report = RunReport(
        run_dir=str(run_dir), method=cfg.method, accuracies=accs, mean=mean, std=std,
        bleu={r["seed"]: r["bleu"] for r in results if r["bleu"] is not None},
        curve_paths=[r["curve_path"] for r in results if "curve_path" in r],
        checkpoint_paths=[p for r in results for p in r.get("checkpoints", [])],
        extras={str(r["seed"]): {k: r[k] for k in ("perturbation_mean", "curriculum", "steps") if k in r}
                for r in results},
        wall_time=time.perf_counter() - t0,
    )
    if cfg.plots:
        report.plot_paths = [str(p) for p in emit_plots(run_dir)]
    (run_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    return report


# ---------------------------------------------------------------- plots

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H, ML, MR, MT, MB = 640, 400, 64, 150, 40, 48


def _read_csv(path, numeric):
    """Header and rows of ``path``; columns named in ``numeric`` are parsed as
    floats (empty allowed as None). Errors carry the 1-based file row."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise PlotError(f"{path}: empty file")
    header, out = rows[0], []
    missing = [c for c in numeric if c not in header]
    if missing:
        raise PlotError(f"{path}:1: missing columns {missing}")
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise PlotError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        rec = dict(zip(header, row))
        for c in numeric:
            if rec[c] == "":
                rec[c] = None
                continue
            try:
                rec[c] = float(rec[c])
            except ValueError:
                raise PlotError(f"{path}:{lineno}: column {c!r} is not a number: {rec[c]!r}") from None
        out.append(rec)
    if not out:
        raise PlotError(f"{path}: no data rows")
    return header, out


def _fmt(v):
    return f"{v:.2f}"


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _label(v):
    return f"{v:.3g}" if abs(v) < 1e4 else f"{v:.0f}"


def _frame(title, xlabel, ylabel, xlo, xhi, ylo, yhi):
    pw, ph = W - ML - MR, H - MT - MB
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.0f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for v in _ticks(xlo, xhi):
        x = ML + (0 if xhi == xlo else (v - xlo) / (xhi - xlo) * pw)
        parts.append(f'<text x="{_fmt(x)}" y="{H - MB + 16}" text-anchor="middle" font-family="sans-serif" '
                     f'font-size="10">{_label(v)}</text>')
    for v in _ticks(ylo, yhi):
        y = MT + ph - (0 if yhi == ylo else (v - ylo) / (yhi - ylo) * ph)
        parts.append(f'<text x="{ML - 6}" y="{_fmt(y + 3)}" text-anchor="end" font-family="sans-serif" '
                     f'font-size="10">{_label(v)}</text>')
    parts.append(f'<text x="{ML + pw / 2:.0f}" y="{H - 10}" text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12">{xlabel}</text>')
    parts.append(f'<text x="14" y="{MT + ph / 2:.0f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 14 {MT + ph / 2:.0f})">{ylabel}</text>')
    return parts


def line_chart(series, title, xlabel, ylabel, ylim=None):
    """SVG text with one polyline per (label, [(x, y), ...]) series."""
    series = [(label, pts) for label, pts in series if pts]
    if not series:
        raise PlotError("nothing to plot")
    xs = [x for _, pts in series for x, _ in pts]
    ys = [y for _, pts in series for _, y in pts]
    xlo, xhi = min(xs), max(xs)
    ylo, yhi = ylim if ylim else (min(ys), max(ys))
    pw, ph = W - ML - MR, H - MT - MB
    parts = _frame(title, xlabel, ylabel, xlo, xhi, ylo, yhi)
    for i, (label, pts) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(
            f"{_fmt(ML + (0 if xhi == xlo else (x - xlo) / (xhi - xlo) * pw))},"
            f"{_fmt(MT + ph - (0 if yhi == ylo else (y - ylo) / (yhi - ylo) * ph))}" for x, y in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = MT + 14 + 18 * i
        parts.append(f'<line x1="{W - MR + 10}" y1="{ly}" x2="{W - MR + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{W - MR + 36}" y="{ly + 4}" font-family="sans-serif" font-size="11">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bar_chart(bars, title, xlabel, ylabel):
    """SVG text with one bar per (label, value); a None value is drawn as n/a."""
    if not bars:
        raise PlotError("nothing to plot")
    pw, ph = W - ML - MR, H - MT - MB
    parts = _frame(title, xlabel, ylabel, 0, 0, 0.0, 1.0)
    slot = pw / len(bars)
    for i, (label, v) in enumerate(bars):
        x = ML + slot * i + slot * 0.15
        parts.append(f'<text x="{_fmt(x + slot * 0.35)}" y="{H - MB + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{label}</text>')
        if v is None:
            parts.append(f'<text x="{_fmt(x + slot * 0.35)}" y="{MT + ph - 4}" text-anchor="middle" '
                         f'font-family="sans-serif" font-size="10">n/a</text>')
            continue
        h = max(0.0, min(1.0, v)) * ph
        parts.append(f'<rect x="{_fmt(x)}" y="{_fmt(MT + ph - h)}" width="{_fmt(slot * 0.7)}" height="{_fmt(h)}" '
                     f'fill="{PALETTE[0]}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _binned(points, limit=400):
    """Means over equal runs of consecutive points, at most ``limit`` of them."""
    if len(points) <= limit:
        return points
    out = []
    for chunk in np.array_split(np.asarray(points, dtype=np.float64), limit):
        out.append((float(chunk[:, 0].mean()), float(chunk[:, 1].mean())))
    return out


def plot_curve_csv(csv_path, svg_path):
    _, rows = _read_csv(csv_path, ["step", "target_accuracy", "source_bleu"])
    svg = line_chart([
        ("target accuracy", [(r["step"], r["target_accuracy"]) for r in rows]),
        ("source BLEU", [(r["step"], r["source_bleu"]) for r in rows]),
    ], "Pseudo-parallel data quality", "step", "score", ylim=(0.0, 1.0))
    Path(svg_path).write_text(svg, encoding="utf-8")
    return svg_path


def plot_log_csv(csv_path, svg_path):
    _, rows = _read_csv(csv_path, ["step", "loss"])
    groups = {}
    for r in rows:
        groups.setdefault(f"{r['direction']} {r['data_kind']}", []).append((r["step"], r["loss"]))
    svg = line_chart([(k, _binned(v)) for k, v in sorted(groups.items())], "Training loss", "step", "loss")
    Path(svg_path).write_text(svg, encoding="utf-8")
    return svg_path


def plot_curriculum_csv(csv_path, svg_path):
    _, rows = _read_csv(csv_path, ["k", "subset_size", "accuracy"])
    bars = [(f"T{int(r['k'])}", r["accuracy"]) for r in rows]
    Path(svg_path).write_text(bar_chart(bars, "Accuracy on nested curriculum subsets", "subset", "accuracy"),
                              encoding="utf-8")
    return svg_path


def emit_plots(run_dir):
    """Render every curve / log / curriculum CSV under ``run_dir`` to SVG."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"no such run directory: {run_dir}")
    written = []
    renderers = {"curve.csv": ("quality.svg", plot_curve_csv), "log.csv": ("loss.svg", plot_log_csv),
                 "curriculum.csv": ("curriculum.svg", plot_curriculum_csv)}
    for csv_path in sorted(run_dir.rglob("*.csv")):
        if csv_path.name in renderers:
            name, fn = renderers[csv_path.name]
            written.append(fn(csv_path, csv_path.with_name(name)))
    if not written:
        raise PlotError(f"{run_dir}: no curve, log or curriculum CSVs to plot")
    return written
