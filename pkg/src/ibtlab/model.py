"""Two-layer GRU encoder-decoder with bilinear global attention."""
from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import ConfigError, Vocab

CHECKPOINT_VERSION = 1
DIRECTIONS = ("src2trg", "trg2src")


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    embed_dim: int = 200
    hidden_dim: int = 200
    layers: int = 2
    dropout_rate: float = 0.5
    max_decode_len: int = 64
    init_scale: float = 0.08
    dtype: str = "float32"
    optimizer: dict = field(default_factory=lambda: {"kind": "adam", "lr": 1e-3, "clip": 5.0})

    def __post_init__(self):
        for name in ("embed_dim", "hidden_dim", "layers", "max_decode_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"model.{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"model.dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"model.dtype must be float32 or float64, got {self.dtype!r}")
        if self.optimizer.get("kind", "adam") not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer.get('kind')!r}")

    @classmethod
    def preset(cls, name, **overrides):
        presets = {
            "scan": dict(embed_dim=200, hidden_dim=200, max_decode_len=64),
            "cfq": dict(embed_dim=300, hidden_dim=300, max_decode_len=128),
            # single-core budget: narrower and without dropout, picked from probe runs (README)
            "desk": dict(embed_dim=128, hidden_dim=128, dropout_rate=0.0, max_decode_len=64),
        }
        if name not in presets:
            raise ConfigError(f"unknown model preset {name!r}")
        return cls(**{**presets[name], **overrides})


@dataclass
class DecodeResult:
    tokens: tuple
    truncated: bool


def pad_batch(seqs, pad, length=None):
    L = length or max(len(s) for s in seqs)
    out = np.full((len(seqs), L), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


class Seq2Seq:
    """One translation direction. Parameters live in ``self.params`` (name -> Tensor)."""

    def __init__(self, config, src_vocab, trg_vocab, direction="src2trg", rng=None, init=True):
        if direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        self.config = config
        self.src_vocab = src_vocab
        self.trg_vocab = trg_vocab
        self._direction = direction
        self.training = True
        self.params = {}
        if init:
            rng = rng if rng is not None else np.random.default_rng(0)
            self._init_params(rng)
        self.optimizer = T.Optimizer(self.params, **config.optimizer)

    @property
    def direction(self):
        return self._direction

    def _init_params(self, rng):
        c = self.config
        E, H, s = c.embed_dim, c.hidden_dim, c.init_scale
        dt = np.dtype(c.dtype)

        def u(*shape):
            return rng.uniform(-s, s, size=shape).astype(dt)

        shapes = {"src_emb": (len(self.src_vocab), E), "trg_emb": (len(self.trg_vocab), E)}
        for side in ("enc", "dec"):
            for layer in range(c.layers):
                inp = E if layer == 0 else H
                shapes[f"{side}{layer}.w_ih"] = (inp, 3 * H)
                shapes[f"{side}{layer}.b_ih"] = (3 * H,)
                shapes[f"{side}{layer}.w_hh"] = (H, 3 * H)
                shapes[f"{side}{layer}.b_hh"] = (3 * H,)
        shapes.update({"attn.w": (H, H), "comb.w": (2 * H, H), "comb.b": (H,),
                       "out.w": (H, len(self.trg_vocab)), "out.b": (len(self.trg_vocab),)})
        for name, shape in shapes.items():
            self.params[name] = T.Tensor(u(*shape), requires_grad=True, name=name)

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    # ---------------------------------------------------------------- batching

    def source_ids(self, sources):
        seqs = [self.src_vocab.encode(s) for s in sources]
        if any(len(s) == 0 for s in seqs):
            raise ValueError("empty source sequence")
        ids = pad_batch(seqs, self.src_vocab.pad)
        return ids, ids != self.src_vocab.pad

    def target_ids(self, targets):
        limit = self.config.max_decode_len
        seqs = [self.trg_vocab.encode(t) for t in targets]
        for t in seqs:
            if len(t) + 1 > limit:
                raise ValueError(f"target of length {len(t)} exceeds max_decode_len={limit} (with EOS)")
        inp = pad_batch([[self.trg_vocab.bos] + s for s in seqs], self.trg_vocab.pad)
        out = pad_batch([s + [self.trg_vocab.eos] for s in seqs], self.trg_vocab.pad)
        return inp, out

    # ---------------------------------------------------------------- forward

    def _drop(self, x, rng):
        return T.dropout(x, self.config.dropout_rate, rng, self.training and rng is not None)

    def _stack(self, side, x, h0s, mask, rng):
        p = self.params
        finals, hs = [], None
        B = x.shape[0]
        for layer in range(self.config.layers):
            h0 = h0s[layer] if h0s is not None else T.Tensor(np.zeros((B, self.config.hidden_dim), self.dtype))
            xp = T.add(T.matmul(x, p[f"{side}{layer}.w_ih"]), p[f"{side}{layer}.b_ih"])
            hs = T.gru_sequence(xp, h0, p[f"{side}{layer}.w_hh"], p[f"{side}{layer}.b_hh"], mask)
            finals.append(T.select_time(hs, hs.shape[1] - 1))
            x = self._drop(hs, rng) if layer + 1 < self.config.layers else hs
        return hs, finals

    def encode(self, src_ids, src_mask=None, rng=None):
        """Annotations [B, S, H] of the top layer and per-layer final states.

        PAD positions carry the previous state forward, so the final state is the
        state at the last real token.
        """
        src_ids = np.asarray(src_ids)
        if src_ids.size and (src_ids.min() < 0 or src_ids.max() >= len(self.src_vocab)):
            raise IndexError("source id outside the source vocabulary")
        if src_mask is None:
            src_mask = src_ids != self.src_vocab.pad
        x = self._drop(T.embedding(self.params["src_emb"], src_ids), rng)
        return self._stack("enc", x, None, src_mask, rng)

    def _attend(self, dec, ann, src_mask):
        p = self.params
        q = T.matmul(dec, p["attn.w"])
        scores = T.matmul(q, T.transpose_last(ann))
        weights = T.masked_softmax(scores, np.asarray(src_mask)[:, None, :])
        ctx = T.matmul(weights, ann)
        return T.tanh(T.add(T.matmul(T.concat([dec, ctx]), p["comb.w"]), p["comb.b"])), weights

    def forward(self, src_ids, src_mask, trg_in, rng=None):
        """Teacher-forced logits [B, T, V]."""
        ann, finals = self.encode(src_ids, src_mask, rng)
        y = self._drop(T.embedding(self.params["trg_emb"], trg_in), rng)
        dec, _ = self._stack("dec", y, finals, None, rng)
        comb, _ = self._attend(dec, ann, src_mask)
        comb = self._drop(comb, rng)
        return T.add(T.matmul(comb, self.params["out.w"]), self.params["out.b"])

    def loss(self, pairs, rng=None):
        sources = [p[0] if isinstance(p, tuple) else p.source for p in pairs]
        targets = [p[1] if isinstance(p, tuple) else p.target for p in pairs]
        src_ids, src_mask = self.source_ids(sources)
        trg_in, trg_out = self.target_ids(targets)
        logits = self.forward(src_ids, src_mask, trg_in, rng)
        V = len(self.trg_vocab)
        return T.softmax_cross_entropy(T.reshape(logits, (-1, V)), trg_out.reshape(-1),
                                       ignore_index=self.trg_vocab.pad)

    def train_batch(self, pairs, rng):
        """Teacher-forced update on ``pairs`` ((source, target) token tuples or Pair)."""
        if not pairs:
            raise ValueError("train_batch needs a non-empty batch")
        self.train()
        loss = self.loss(pairs, rng)
        loss.backward()
        self.optimizer.step()
        return float(loss.data)

    # ---------------------------------------------------------------- decoding

    def greedy_decode_batch(self, sources, return_attention=False):
        """Greedy argmax decoding of many sources at once (eval mode, no graph)."""
        was_training = self.training
        self.eval()
        try:
            src_ids, src_mask = self.source_ids(sources)
            ann, finals = self.encode(src_ids, src_mask)
        finally:
            self.training = was_training
        p = {k: v.data for k, v in self.params.items()}
        A = ann.data
        hs = [f.data for f in finals]
        B = A.shape[0]
        V = self.trg_vocab
        prev = np.full(B, V.bos, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        out = [[] for _ in range(B)]
        attn_log = []
        neg = np.finfo(A.dtype).min
        for _ in range(self.config.max_decode_len):
            x = p["trg_emb"][prev]
            for layer in range(self.config.layers):
                xp = x @ p[f"dec{layer}.w_ih"] + p[f"dec{layer}.b_ih"]
                hs[layer], _ = T.gru_step_np(xp, hs[layer], p[f"dec{layer}.w_hh"], p[f"dec{layer}.b_hh"])
                x = hs[layer]
            q = x @ p["attn.w"]
            scores = np.einsum("bh,bsh->bs", q, A)
            w = T.softmax_np(np.where(src_mask, scores, neg)) * src_mask
            if return_attention:
                attn_log.append(w)
            ctx = np.einsum("bs,bsh->bh", w, A)
            comb = np.tanh(np.concatenate([x, ctx], axis=1) @ p["comb.w"] + p["comb.b"])
            logits = comb @ p["out.w"] + p["out.b"]
            nxt = logits.argmax(axis=1)
            for i in np.nonzero(~done)[0]:
                if nxt[i] == V.eos:
                    done[i] = True
                else:
                    out[i].append(int(nxt[i]))
            if done.all():
                break
            prev = nxt
        results = [DecodeResult(self._clean(ids), not d) for ids, d in zip(out, done)]
        if return_attention:
            return results, attn_log
        return results

    def _clean(self, ids):
        V = self.trg_vocab
        return V.decode([i for i in ids if i not in (V.pad, V.bos)])

    def greedy_decode(self, source):
        return self.greedy_decode_batch([source])[0]

    def translate(self, sources, batch_size=512):
        """Token tuples for every source, decoded in chunks."""
        out = []
        for i in range(0, len(sources), batch_size):
            out.extend(r.tokens for r in self.greedy_decode_batch(sources[i:i + batch_size]))
        return out

    # ---------------------------------------------------------------- state

    def state_hash(self):
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return h.hexdigest()

    def copy_params_from(self, other):
        for k, v in other.params.items():
            self.params[k].data = v.data.copy()

    def save(self, path):
        meta = {
            "version": CHECKPOINT_VERSION,
            "direction": self.direction,
            "config": asdict(self.config),
            "src_vocab": self.src_vocab.itos,
            "trg_vocab": self.trg_vocab.itos,
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
        }
        buf = io.BytesIO()
        arrays = {f"param/{k}": v.data for k, v in self.params.items()}
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        np.savez(buf, **arrays)
        with open(path, "wb") as f:
            f.write(buf.getvalue())

    @classmethod
    def load(cls, path):
        try:
            with np.load(path, allow_pickle=False) as z:
                meta = json.loads(bytes(z["meta"]).decode())
                arrays = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        except (zipfile.BadZipFile, OSError, KeyError, ValueError, EOFError) as e:
            raise CheckpointError(f"{path}: unreadable checkpoint ({e})") from e
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}")
        model = cls(ModelConfig(**meta["config"]), Vocab(meta["src_vocab"]), Vocab(meta["trg_vocab"]),
                    meta["direction"])
        for name, t in model.params.items():
            if name not in arrays:
                raise CheckpointError(f"{path}: missing parameter {name!r}")
            if arrays[name].shape != t.shape:
                raise CheckpointError(f"{path}: parameter {name!r} has shape {arrays[name].shape}, expected {t.shape}")
            t.data = arrays[name].astype(t.dtype)
        return model
