"""Curriculum iterative back-translation: staged release of monolingual data."""
from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass

import numpy as np

from .data import ConfigError
from .metrics import exact_match_accuracy
from .training import TrainingRun, _check_mono

log = logging.getLogger(__name__)

STRATEGIES = ("entity_count", "target_length")
ENTITY = re.compile(r"M[0-9]")


@dataclass
class CurriculumSpec:
    n: int = 6
    c: int = 3000
    strategy: str = "entity_count"
    total_budget: int = 25000

    def __post_init__(self):
        if self.n < 1 or self.c < 1:
            raise ConfigError(f"curriculum needs n >= 1 and c >= 1, got n={self.n}, c={self.c}")
        if self.n * self.c > self.total_budget:
            raise ConfigError(f"n*c = {self.n * self.c} exceeds the IBT budget {self.total_budget}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown curriculum strategy {self.strategy!r}")
        if self.strategy == "entity_count" and self.n != 6:
            raise ConfigError("entity_count segmentation has exactly 6 buckets (<=1, 2, 3, 4, 5, >=6)")

    @property
    def continuation_steps(self):
        return self.total_budget - self.n * self.c


@dataclass
class SegmentationResult:
    src_parts: list
    trg_parts: list


def count_entities(sequence):
    """Number of distinct entity placeholders (M0 ... M9)."""
    toks = sequence.split() if isinstance(sequence, str) else sequence
    return len({t for t in toks if ENTITY.fullmatch(t)})


def curriculum_index(seqs, strategy, n):
    """0-based curriculum of every sequence in ``seqs``."""
    if strategy == "entity_count":
        if n != 6:
            raise ConfigError("entity_count segmentation has exactly 6 buckets")
        return [min(max(count_entities(s), 1), 6) - 1 for s in seqs]
    if strategy == "target_length":
        # equal-size quantile buckets over the length order; ties keep input order
        order = np.argsort([len(s) for s in seqs], kind="stable")
        idx = np.empty(len(seqs), dtype=int)
        for part, chunk in enumerate(np.array_split(order, n)):
            idx[chunk] = part
        return idx.tolist()
    raise ConfigError(f"unknown curriculum strategy {strategy!r}")


def segment(seqs, strategy, n):
    """Split ``seqs`` into ``n`` parts from easy to hard (input order kept within a part)."""
    parts = [[] for _ in range(n)]
    for s, k in zip(seqs, curriculum_index(seqs, strategy, n)):
        parts[k].append(s)
    return parts


def segment_corpus(mono, strategy, n):
    return SegmentationResult(segment(mono.src_side, strategy, n), segment(mono.trg_side, strategy, n))


def run_cibt(m_fwd, m_bwd, parallel, mono, spec, config, pretrained=False, run=None):
    """Curriculum IBT.

    Stage t adds part t of both mono sides to the accumulated corpora and runs c
    IBT steps on them; then ``total_budget - n*c`` steps run on the full corpora.
    Without ``pretrained`` the K-step supervised stage runs first.
    """
    _check_mono(mono)
    run = run or TrainingRun(m_fwd, m_bwd, parallel, config, mono)
    if not pretrained:
        run.initial_stage()
    seg = segment_corpus(mono, spec.strategy, spec.n)
    acc_src, acc_trg = [], []
    run.stage_bounds = []
    for t in range(spec.n):
        if not seg.src_parts[t] or not seg.trg_parts[t]:
            log.warning("curriculum %d is empty on the %s side", t + 1,
                        "source" if not seg.src_parts[t] else "target")
        acc_src = acc_src + seg.src_parts[t]
        acc_trg = acc_trg + seg.trg_parts[t]
        if not acc_src or not acc_trg:
            raise ConfigError(f"stage {t + 1}: accumulated monolingual corpus is empty")
        run.set_mono(acc_src, acc_trg)
        run.ibt_iterations(spec.c)
        run.stage_bounds.append(run.step)
    run.set_mono(_full(acc_src, mono.src_side), _full(acc_trg, mono.trg_side))
    run.ibt_iterations(spec.continuation_steps)
    return run


def _full(accumulated, original):
    # after the last stage the accumulated corpus holds every sequence; reuse it
    # so the sampler (and its epoch) carries on into the continuation phase
    return accumulated if len(accumulated) == len(original) else list(original)


def evaluate_per_curriculum(model, test, strategy, n, nested=True, predictions=None):
    """Exact-match accuracy per curriculum subset of ``test``.

    nested=True gives T_1 ⊂ ... ⊂ T_n (T_k = pairs in the first k curriculums);
    nested=False gives each curriculum on its own. Empty subsets report None.
    Returns a list of (k, subset_size, accuracy). Entity counts are read off the
    source, lengths off the target.
    """
    keyed = [p.target if strategy == "target_length" else p.source for p in test]
    idx = curriculum_index(keyed, strategy, n)
    preds = predictions if predictions is not None else model.translate([p.source for p in test])
    rows = []
    for k in range(1, n + 1):
        members = [i for i, c in enumerate(idx) if (c < k if nested else c == k - 1)]
        if not members:
            rows.append((k, 0, None))
            continue
        acc = exact_match_accuracy([preds[i] for i in members], [test[i].target for i in members])
        rows.append((k, len(members), acc))
    return rows


def write_curriculum_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["k", "subset_size", "accuracy"])
        for k, size, acc in rows:
            w.writerow([k, size, "" if acc is None or (isinstance(acc, float) and math.isnan(acc)) else f"{acc:.6f}"])
