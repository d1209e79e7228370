"""Exact match, corpus BLEU, pseudo-data quality curves and perturbation counts."""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass


@dataclass
class QualityCurvePoint:
    step: int
    target_side_accuracy: float
    source_side_bleu: float


@dataclass
class PerturbationStats:
    counts: dict
    mean: float


def _toks(s):
    return tuple(s.split()) if isinstance(s, str) else tuple(s)


def exact_match_accuracy(predictions, references):
    if len(predictions) != len(references):
        raise ValueError(f"{len(predictions)} predictions vs {len(references)} references")
    if not references:
        raise ValueError("exact_match_accuracy of an empty list")
    hits = sum(_toks(p) == _toks(r) for p, r in zip(predictions, references))
    return hits / len(references)


def _ngrams(toks, n):
    return Counter(toks[i:i + n] for i in range(len(toks) - n + 1))


def corpus_bleu(hypotheses, references, max_n=4):
    """Corpus-level BLEU with uniform weights, one reference per hypothesis, no smoothing."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ValueError("corpus_bleu of an empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for h, r in zip(hypotheses, references):
        h, r = _toks(h), _toks(r)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    if min(matches) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p)


def track_quality(m_fwd, m_bwd, mono, step, oracle=None):
    """Quality of pseudo data generated from the whole mono corpus at ``step``.

    Target side: exact match of M→'s translations of D_src against ``oracle``
    (a callable source -> target, e.g. the SCAN interpreter) or, without one, the
    corpus' aligned references. Source side: BLEU of M←'s translations of D_trg
    against the aligned sources.
    """
    if oracle is not None:
        refs, missing = [], []
        for s in mono.src_side:
            try:
                refs.append(tuple(oracle(s)))
            except (KeyError, ValueError):
                missing.append(" ".join(s))
        if missing:
            raise ValueError(f"oracle does not cover {len(missing)} sources, e.g. {missing[:5]}")
    else:
        refs = mono.src_refs
        if refs is None:
            raise ValueError("no oracle and no aligned targets for the source-side mono data")
    if mono.trg_refs is None:
        raise ValueError("no aligned sources for the target-side mono data")
    preds = m_fwd.translate(list(mono.src_side))
    back = m_bwd.translate(list(mono.trg_side))
    return QualityCurvePoint(step, exact_match_accuracy(preds, refs), corpus_bleu(back, mono.trg_refs))


def write_curve_csv(points, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "target_accuracy", "source_bleu"])
        for p in points:
            w.writerow([p.step, f"{p.target_side_accuracy:.6f}", f"{p.source_side_bleu:.6f}"])


def perturbation_stats(generation_log):
    """Distinct generated counterparts per mono sequence.

    ``generation_log`` is an iterable of (sequence id, generated sequence) or a
    mapping id -> set of generations.
    """
    if isinstance(generation_log, dict):
        distinct = {k: set(map(_toks, v)) for k, v in generation_log.items()}
    else:
        distinct = {}
        for key, gen in generation_log:
            distinct.setdefault(key, set()).add(_toks(gen))
    if not distinct:
        raise ValueError("empty generation log")
    counts = {k: len(v) for k, v in distinct.items()}
    return PerturbationStats(counts, sum(counts.values()) / len(counts))
