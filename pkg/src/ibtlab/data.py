"""SCAN commands, splits, pair files, vocabularies and monolingual corpora."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PRIMITIVES = ("walk", "look", "run", "jump")
ACTION = {"walk": "WALK", "look": "LOOK", "run": "RUN", "jump": "JUMP"}
TURN = {"left": "LTURN", "right": "RTURN"}
# official release spells actions I_JUMP, I_TURN_LEFT, ...
OFFICIAL_ACTIONS = {
    "I_WALK": "WALK", "I_LOOK": "LOOK", "I_RUN": "RUN", "I_JUMP": "JUMP",
    "I_TURN_LEFT": "LTURN", "I_TURN_RIGHT": "RTURN",
}

SPLITS = ("ADD_JUMP", "LENGTH", "AROUND_RIGHT", "OPPOSITE_RIGHT")


class ScanParseError(ValueError):
    def __init__(self, msg, position):
        super().__init__(f"{msg} at token {position}")
        self.position = position


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Pair:
    source: tuple
    target: tuple

    def __post_init__(self):
        if isinstance(self.source, str):
            object.__setattr__(self, "source", tuple(self.source.split()))
        if isinstance(self.target, str):
            object.__setattr__(self, "target", tuple(self.target.split()))
        if not self.source or not self.target:
            raise ValueError("Pair sides must be non-empty")

    @property
    def src(self):
        return " ".join(self.source)

    @property
    def trg(self):
        return " ".join(self.target)


@dataclass
class Dataset:
    name: str
    train: list
    dev: list
    test: list


@dataclass
class MonoCorpus:
    src_side: list
    trg_side: list
    setting: str
    # aligned counterparts of each mono sequence, when known (quality tracking only)
    src_refs: list | None = None
    trg_refs: list | None = None


# ---------------------------------------------------------------- interpreter

def _interpret_verb_phrase(toks, start):
    """Parse V (primitive with optional direction/opposite/around) at ``start``.

    Returns (actions, next_position).
    """
    if start >= len(toks):
        raise ScanParseError("expected a verb", start)
    verb = toks[start]
    i = start + 1
    if verb == "turn":
        act = ()
    elif verb in ACTION:
        act = (ACTION[verb],)
    else:
        raise ScanParseError(f"unknown verb {verb!r}", start)
    mode = None
    if i < len(toks) and toks[i] in ("opposite", "around"):
        mode = toks[i]
        i += 1
    if i < len(toks) and toks[i] in TURN:
        d = TURN[toks[i]]
        i += 1
        if mode is None:
            return (d,) + act, i
        if mode == "opposite":
            return (d, d) + act, i
        return ((d,) + act) * 4, i
    if mode is not None:
        raise ScanParseError(f"{mode!r} needs a direction", i)
    if verb == "turn":
        raise ScanParseError("'turn' needs a direction", i)
    return act, i


def _interpret_sentence(toks, start):
    acts, i = _interpret_verb_phrase(toks, start)
    if i < len(toks) and toks[i] == "twice":
        return acts * 2, i + 1
    if i < len(toks) and toks[i] == "thrice":
        return acts * 3, i + 1
    return acts, i


def scan_interpret(command):
    """Map a SCAN command to its action sequence.

    >>> " ".join(scan_interpret("jump and look left twice"))
    'JUMP LTURN LOOK LTURN LOOK'
    """
    toks = tuple(command.split()) if isinstance(command, str) else tuple(command)
    first, i = _interpret_sentence(toks, 0)
    if i == len(toks):
        return first
    conj = toks[i]
    if conj not in ("and", "after"):
        raise ScanParseError(f"unexpected token {conj!r}", i)
    second, j = _interpret_sentence(toks, i + 1)
    if j != len(toks):
        raise ScanParseError(f"trailing token {toks[j]!r}", j)
    return first + second if conj == "and" else second + first


def _verb_phrases():
    out = [(p,) for p in PRIMITIVES]
    for v in PRIMITIVES + ("turn",):
        for d in ("left", "right"):
            out.append((v, d))
    for mode in ("opposite", "around"):
        for v in PRIMITIVES + ("turn",):
            for d in ("left", "right"):
                out.append((v, mode, d))
    return out


def scan_commands():
    sentences = []
    for vp in _verb_phrases():
        sentences.append(vp)
        sentences.append(vp + ("twice",))
        sentences.append(vp + ("thrice",))
    commands = list(sentences)
    for conj in ("and", "after"):
        for a in sentences:
            for b in sentences:
                commands.append(a + (conj,) + b)
    return commands


def scan_generate_all():
    """Every SCAN command paired with its interpretation, in a fixed order."""
    return [Pair(c, scan_interpret(c)) for c in scan_commands()]


def normalize_actions(tokens):
    return tuple(OFFICIAL_ACTIONS.get(t, t) for t in tokens)


# ---------------------------------------------------------------- splits

def _contains(seq, phrase):
    n = len(phrase)
    return any(tuple(seq[i:i + n]) == phrase for i in range(len(seq) - n + 1))


def build_split(universe, split, rng, dev_fraction=0.5):
    """Train/dev/test for one SCAN split; dev is a seeded random half of the held-out test."""
    if split == "ADD_JUMP":
        train = [p for p in universe if "jump" not in p.source or p.source == ("jump",)]
        test = [p for p in universe if "jump" in p.source and p.source != ("jump",)]
    elif split == "LENGTH":
        train = [p for p in universe if len(p.target) <= 22]
        test = [p for p in universe if len(p.target) >= 24]
    elif split in ("AROUND_RIGHT", "OPPOSITE_RIGHT"):
        phrase = ("around", "right") if split == "AROUND_RIGHT" else ("opposite", "right")
        train = [p for p in universe if not _contains(p.source, phrase)]
        test = [p for p in universe if _contains(p.source, phrase)]
    else:
        raise ConfigError(f"unknown split {split!r}; expected one of {SPLITS}")
    perm = rng.permutation(len(test))
    n_dev = int(round(dev_fraction * len(test)))
    dev_idx = set(perm[:n_dev].tolist())
    dev = [p for i, p in enumerate(test) if i in dev_idx]
    rest = [p for i, p in enumerate(test) if i not in dev_idx]
    return Dataset(name=split, train=train, dev=dev, test=rest)


def dataset_from_files(name, train_path, test_path, dev_path=None, rng=None, fmt=None):
    """Dataset from pair files (e.g. MCD or CFQ-format splits). Without a dev file,
    half of test is held out as dev."""
    train = load_pairs(train_path, fmt)
    test = load_pairs(test_path, fmt)
    if dev_path is not None:
        return Dataset(name, train, load_pairs(dev_path, fmt), test)
    rng = rng if rng is not None else np.random.default_rng(0)
    perm = rng.permutation(len(test))
    n_dev = int(round(0.5 * len(test)))
    dev_idx = set(perm[:n_dev].tolist())
    return Dataset(name, train, [p for i, p in enumerate(test) if i in dev_idx],
                   [p for i, p in enumerate(test) if i not in dev_idx])


# ---------------------------------------------------------------- files

_SCAN_LINE = re.compile(r"^IN:\s*(.*?)\s+OUT:\s*(.*)$")


def _sniff_format(first_line):
    return "scan_in_out" if first_line.startswith("IN:") else "tab_separated"


def load_pairs(path, format=None, normalize=True):
    """Read pairs from an ``IN: ... OUT: ...`` file or a tab-separated file.

    Official SCAN action names (I_JUMP, ...) are mapped to the short forms unless
    ``normalize`` is False.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: no pairs in file")
    fmt = format or _sniff_format(lines[0])
    pairs = []
    for lineno, line in enumerate(lines, 1):
        if fmt == "scan_in_out":
            m = _SCAN_LINE.match(line.strip())
            if not m or not m.group(1) or not m.group(2).strip():
                raise ValueError(f"{path}:{lineno}: malformed line {line!r}")
            src, trg = m.group(1), m.group(2)
        elif fmt == "tab_separated":
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise ValueError(f"{path}:{lineno}: expected 'source<TAB>target', got {line!r}")
            src, trg = parts
        else:
            raise ConfigError(f"unknown pair format {fmt!r}")
        trg_toks = tuple(trg.split())
        if normalize and fmt == "scan_in_out":
            trg_toks = normalize_actions(trg_toks)
        pairs.append(Pair(tuple(src.split()), trg_toks))
    return pairs


def save_pairs(pairs, path, format="tab_separated"):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in pairs:
            if format == "tab_separated":
                f.write(f"{p.src}\t{p.trg}\n")
            elif format == "scan_in_out":
                f.write(f"IN: {p.src} OUT: {p.trg}\n")
            else:
                raise ConfigError(f"unknown pair format {format!r}")


# ---------------------------------------------------------------- vocab

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)


@dataclass
class Vocab:
    itos: list = field(default_factory=lambda: list(RESERVED))

    def __post_init__(self):
        if tuple(self.itos[:4]) != RESERVED:
            raise ValueError("vocab must start with the reserved tokens")
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocab")

    pad = property(lambda self: 0)
    bos = property(lambda self: 1)
    eos = property(lambda self: 2)
    unk = property(lambda self: 3)

    @classmethod
    def build(cls, sequences):
        seen = dict.fromkeys(RESERVED)
        for seq in sequences:
            for tok in seq:
                seen.setdefault(tok)
        specials = list(RESERVED)
        return cls(specials + sorted(t for t in seen if t not in RESERVED))

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens):
        return [self.stoi.get(t, 3) for t in tokens]

    def decode(self, ids):
        return tuple(self.itos[i] for i in ids)

    def to_json(self):
        return json.dumps(self.itos)

    @classmethod
    def from_json(cls, text):
        return cls(json.loads(text))


# ---------------------------------------------------------------- monolingual settings

MONO_SETTINGS = ("transductive", "mono100", "mono30")


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def build_mono_setting(dev, test, setting, rng, fraction=0.3):
    """Unaligned source/target corpora for one of the three monolingual settings.

    The aligned counterparts are kept in ``src_refs``/``trg_refs`` so pseudo-data
    quality can be measured; training code never reads them.
    """
    if setting not in MONO_SETTINGS:
        raise ConfigError(f"unknown mono setting {setting!r}")
    pool = test if setting == "transductive" else dev
    if not pool:
        raise ValueError(f"{setting}: monolingual pool is empty")
    if setting in ("transductive", "mono100"):
        return MonoCorpus([p.source for p in pool], [p.target for p in pool], setting,
                          [p.target for p in pool], [p.source for p in pool])
    k = _round_half_up(fraction * len(pool))
    src_idx = rng.choice(len(pool), size=k, replace=False)
    trg_idx = rng.choice(len(pool), size=k, replace=False)
    src = [pool[i] for i in sorted(src_idx.tolist())]
    trg = [pool[i] for i in sorted(trg_idx.tolist())]
    return MonoCorpus([p.source for p in src], [p.target for p in trg], setting,
                      [p.target for p in src], [p.source for p in trg])
