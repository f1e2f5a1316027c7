"""Embeddings, bidirectional LSTM encoder and the two softmax heads.

Every function works on plain numpy arrays (fast inference) or on tape
nodes when a :class:`~emoreact.graph.Tape` is passed in, in which case the
result is differentiable with respect to the bound parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import graph as G
from .labels import EMOTIONS, REACTIONS


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_emb: int = 100
    d_h: int = 100
    n_reactions: int = len(REACTIONS)
    n_emotions: int = len(EMOTIONS)
    hidden_r: tuple[int, ...] = ()
    hidden_e: tuple[int, ...] = ()
    dropout: float = 0.0

    def __post_init__(self):
        sizes = (self.vocab_size, self.d_emb, self.d_h, self.n_reactions, self.n_emotions,
                 *self.hidden_r, *self.hidden_e)
        if any(int(s) != s or s < 1 for s in sizes):
            raise ValueError(f"all sizes must be positive integers: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        object.__setattr__(self, "hidden_r", tuple(self.hidden_r))
        object.__setattr__(self, "hidden_e", tuple(self.hidden_e))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_r"] = list(self.hidden_r)
        d["hidden_e"] = list(self.hidden_e)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["hidden_r"] = tuple(d.get("hidden_r", ()))
        d["hidden_e"] = tuple(d.get("hidden_e", ()))
        return cls(**d)


@dataclass
class ModelParams:
    config: ModelConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return list(self.arrays)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays.values())

    def head_layers(self, head: str) -> int:
        hidden = self.config.hidden_r if head == "head_r" else self.config.hidden_e
        return len(hidden) + 1


def _head_sizes(cfg: ModelConfig, head: str) -> list[int]:
    hidden = cfg.hidden_r if head == "head_r" else cfg.hidden_e
    out = cfg.n_reactions if head == "head_r" else cfg.n_emotions
    return [2 * cfg.d_h, *hidden, out]


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) affine maps, Uniform(+-0.05) embeddings, forget bias 1."""
    rng = np.random.default_rng(seed)
    d, h = config.d_emb, config.d_h
    arrays: dict[str, np.ndarray] = {}
    arrays["embedding"] = rng.uniform(-0.05, 0.05, size=(config.vocab_size, d))
    bound = 1.0 / math.sqrt(d + h)
    for direction in ("fwd", "bwd"):
        arrays[f"{direction}.W"] = rng.uniform(-bound, bound, size=(d, 4 * h))
        arrays[f"{direction}.U"] = rng.uniform(-bound, bound, size=(h, 4 * h))
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0
        arrays[f"{direction}.b"] = b
    for head in ("head_r", "head_e"):
        sizes = _head_sizes(config, head)
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / math.sqrt(fan_in)
            arrays[f"{head}.{k}.W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            arrays[f"{head}.{k}.b"] = rng.uniform(-bound, bound, size=fan_out)
    return ModelParams(config, arrays)


def bind(params: ModelParams, tape: G.Tape | None):
    """Parameter lookup: tape nodes when ``tape`` is given, raw arrays otherwise."""
    if tape is None:
        return params.arrays
    return {name: tape.parameter(arr, name) for name, arr in params.arrays.items()}


# ---------------------------------------------------------------------------
# Encoder


def lstm_cell(x_t, h_prev, c_prev, weights, x_proj=None):
    """One LSTM step; gate blocks are ordered input, forget, candidate, output.

    ``weights`` is ``(W, U, b)``.  ``x_proj`` may carry a precomputed
    ``x_t @ W + b``.
    """
    W, U, b = weights
    if x_proj is None:
        x_proj = G.matmul(x_t, W) + b
    z = x_proj + G.matmul(h_prev, U)
    if not isinstance(z, G.Node) and np.isnan(z).any():
        raise ValueError("NaN in LSTM input")
    h = G.value_of(U).shape[0]
    i = G.sigmoid(z[..., :h])
    f = G.sigmoid(z[..., h:2 * h])
    o = G.sigmoid(z[..., 3 * h:])
    g = G.tanh(z[..., 2 * h:3 * h])
    c = f * c_prev + i * g
    h_t = o * G.tanh(c)
    return h_t, c


def _check_ids(seqs: Sequence[Sequence[int]], vocab_size: int, max_len: int | None):
    for s in seqs:
        if len(s) == 0:
            raise ValueError("cannot encode an empty sequence")
        if max_len is not None and len(s) > max_len:
            raise ValueError(f"sequence of length {len(s)} exceeds max_len {max_len}")
        if min(s) < 0 or max(s) >= vocab_size:
            raise ValueError(f"token id out of range for vocabulary of size {vocab_size}")


def _run_direction(xp_steps, masks, h0, c0, U, order, full_upto):
    """Run one direction over padded steps, freezing state where the mask is 0.

    Positions below ``full_upto`` are real tokens in every row and skip the mask.
    """
    h, c = h0, c0
    for t in order:
        h_new, c_new = lstm_cell(None, h, c, (None, U, None), x_proj=xp_steps[t])
        if t < full_upto:
            h, c = h_new, c_new
        else:
            m = masks[t]
            h = h + m * (h_new - h)
            c = c + m * (c_new - c)
    return h


def encode_batch(seqs: Sequence[Sequence[int]], params: ModelParams, tape: G.Tape | None = None,
                 training: bool = False, rng: np.random.Generator | None = None, max_len: int | None = 30):
    """Sentence representations ``[h_T^fwd, h_1^bwd]`` for a batch, shape (B, 2*d_h).

    Sequences are padded internally but padding never changes a state: the
    forward run freezes after the last real token and the backward run
    stays at zero until it reaches it.
    """
    cfg = params.config
    _check_ids(seqs, cfg.vocab_size, max_len)
    P = bind(params, tape)
    B = len(seqs)
    lengths = np.array([len(s) for s in seqs])
    T = int(lengths.max())
    ids = np.zeros((B, T), dtype=np.intp)
    for k, s in enumerate(seqs):
        ids[k, : len(s)] = s
    masks = [(t < lengths).astype(np.float64)[:, None] for t in range(T)]
    full_upto = int(lengths.min())

    emb = G.take_rows(P["embedding"], ids.reshape(-1))  # (B*T, d)
    zeros = np.zeros((B, cfg.d_h))
    halves = []
    for direction, order in (("fwd", range(T)), ("bwd", range(T - 1, -1, -1))):
        W, U, b = P[f"{direction}.W"], P[f"{direction}.U"], P[f"{direction}.b"]
        proj = (G.matmul(emb, W) + b).reshape(B, T, 4 * cfg.d_h)
        steps = [proj[:, t, :] for t in range(T)]
        h = _run_direction(steps, masks, zeros, zeros, U, order, full_upto)
        halves.append(h)
    state = G.concat(halves, axis=-1)
    if training and cfg.dropout > 0:
        rng = rng or np.random.default_rng()
        keep = (rng.random(G.value_of(state).shape) >= cfg.dropout) / (1.0 - cfg.dropout)
        state = state * keep
    return state


def encode(tokens: Sequence[int], params: ModelParams, tape: G.Tape | None = None,
           training: bool = False, rng: np.random.Generator | None = None):
    """Representation of a single sentence, shape (2*d_h,)."""
    state = encode_batch([tokens], params, tape, training, rng)
    return state[0]


# ---------------------------------------------------------------------------
# Heads


def head_logits(state, params: ModelParams, head: str, tape: G.Tape | None = None):
    P = bind(params, tape)
    x = state
    n = params.head_layers(head)
    for k in range(n):
        x = G.matmul(x, P[f"{head}.{k}.W"]) + P[f"{head}.{k}.b"]
        if k < n - 1:
            x = G.tanh(x)
    return x


def predict(state, params: ModelParams, tape: G.Tape | None = None):
    """``(p_r, p_e)``: softmax distributions over reactions and emotions."""
    if not isinstance(state, G.Node) and not np.isfinite(state).all():
        raise ValueError("encoder state is not finite")
    p_r = G.softmax(head_logits(state, params, "head_r", tape), axis=-1)
    p_e = G.softmax(head_logits(state, params, "head_e", tape), axis=-1)
    return p_r, p_e


def forward_batch(seqs, params: ModelParams, tape: G.Tape | None = None, training: bool = False,
                  rng: np.random.Generator | None = None):
    state = encode_batch(seqs, params, tape, training, rng)
    return predict(state, params, tape)


def predict_proba(seqs, params: ModelParams, batch_size: int = 256):
    """Inference-mode probabilities for many sequences, as arrays."""
    p_rs, p_es = [], []
    for start in range(0, len(seqs), batch_size):
        p_r, p_e = forward_batch(seqs[start:start + batch_size], params)
        p_rs.append(p_r)
        p_es.append(p_e)
    if not p_rs:
        return np.zeros((0, params.config.n_reactions)), np.zeros((0, params.config.n_emotions))
    return np.concatenate(p_rs), np.concatenate(p_es)


def argmax_pair(p_r, p_e) -> tuple[str, str]:
    """The (emotion, reaction) pair with the largest probabilities; ties go to the lower index."""
    return EMOTIONS[int(np.argmax(p_e))], REACTIONS[int(np.argmax(p_r))]


# ---------------------------------------------------------------------------
# Pre-trained embeddings and checkpoints


def load_embeddings(params: ModelParams, path, vocab) -> int:
    """Copy vectors from a word2vec-style text file into the embedding table.

    Returns the number of vocabulary rows filled; other rows keep their
    random initialization.
    """
    table = params.arrays["embedding"]
    filled = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip().split(" ")
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            token, values = parts[0], parts[1:]
            if len(values) != table.shape[1]:
                raise ValueError(f"{path}:{lineno}: expected {table.shape[1]} values, got {len(values)}")
            idx = vocab.index.get(token)
            if idx is not None:
                table[idx] = np.asarray(values, dtype=np.float64)
                filled += 1
    return filled


def save_checkpoint(path, params: ModelParams, vocab_hash: str, extra: dict | None = None) -> None:
    meta = {
        "config": params.config.to_dict(),
        "vocab_hash": vocab_hash,
        "shapes": {k: list(v.shape) for k, v in params.arrays.items()},
        "extra": extra or {},
    }
    payload = {f"param/{k}": v for k, v in params.arrays.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **payload)


def load_checkpoint(path, expected_vocab_hash: str | None = None) -> tuple[ModelParams, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        arrays = {k[len("param/"):]: data[k].astype(np.float64) for k in data.files if k.startswith("param/")}
    if expected_vocab_hash is not None and meta["vocab_hash"] != expected_vocab_hash:
        raise CheckpointError("checkpoint was trained with a different vocabulary")
    for name, shape in meta["shapes"].items():
        if list(arrays[name].shape) != shape:
            raise CheckpointError(f"shape mismatch for {name}")
    return ModelParams(ModelConfig.from_dict(meta["config"]), arrays), meta
