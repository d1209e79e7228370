"""Iterative back-translation for compositional generalization, at desk scale.

A numpy seq2seq (GRU encoder-decoder with attention) on SCAN-style tasks, the
iterative back-translation schedule with its BT / on-the-fly ablations, and the
curriculum variant, plus the metrics and experiment harness around them.
"""
from .data import ConfigError, Dataset, MonoCorpus, Pair, Vocab, build_mono_setting, build_split, scan_interpret
from .model import ModelConfig, Seq2Seq
from .training import IbtConfig, run_bt, run_bt_otf, run_ibt, train_supervised
from .curriculum import CurriculumSpec, run_cibt
from .metrics import corpus_bleu, exact_match_accuracy
from .harness import ExperimentConfig, RunReport, emit_plots, run_experiment

__version__ = "0.1.0"
