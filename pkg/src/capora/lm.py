"""Atom-conditioned LSTM language model.

Every gate receives an additive term ``A_g @ phi`` where ``phi`` is the sum of
the atom embeddings of the conditioning bag.  The hidden state is
``h = o * c`` and the next-word distribution is
``softmax(U_p @ tanh(W_p @ h + b_p) + d)``.  All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Iterable, Sequence

import numpy as np

BOS_ID, EOS_ID, UNK_ID = 0, 1, 2
GATES = ("f", "i", "o", "c")
INIT_SCALE = 0.05
FORGET_BIAS = 1.0


class DivergenceError(FloatingPointError):
    """A non-finite value appeared in a forward or backward pass."""

    def __init__(self, message: str, log=None):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    atom_vocab_size: int
    word_embed_dim: int = 128
    atom_embed_dim: int = 128
    hidden_dim: int = 256
    dropout: bool = False
    dropout_rate: float = 0.5

    def __post_init__(self):
        for f in ("vocab_size", "atom_vocab_size", "word_embed_dim", "atom_embed_dim", "hidden_dim"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1, got {getattr(self, f)}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**{f.name: obj[f.name] for f in fields(cls) if f.name in obj})


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Tensor names and shapes in canonical (serialization) order.

    The deep-output projection maps the hidden state to ``word_embed_dim``.
    """
    V, A = config.vocab_size, config.atom_vocab_size
    dw, da, H = config.word_embed_dim, config.atom_embed_dim, config.hidden_dim
    shapes = {"E_w": (V, dw), "E_a": (A, da)}
    for g in GATES:
        shapes[f"W_{g}"] = (H, dw)
        shapes[f"U_{g}"] = (H, H)
        shapes[f"A_{g}"] = (H, da)
        shapes[f"b_{g}"] = (H,)
    shapes.update({"W_p": (dw, H), "b_p": (dw,), "U_p": (V, dw), "d": (V,)})
    return shapes


@dataclass(frozen=True)
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(param_shapes(self.config))

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def map(self, fn: Callable[[str, np.ndarray], np.ndarray]) -> "ModelParams":
        return ModelParams(self.config, {k: fn(k, v) for k, v in self.tensors.items()})

    def n_params(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def equal(self, other: "ModelParams") -> bool:
        return self.config == other.config and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors)


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.startswith("b_") or name == "d":
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
    tensors["b_f"][:] = FORGET_BIAS
    return ModelParams(config, tensors)


# ---------------------------------------------------------------------------
# single step

@dataclass(frozen=True)
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int) -> "LstmState":
        return cls(np.zeros(hidden_dim), np.zeros(hidden_dim))


@dataclass(frozen=True)
class StepTrace:
    f: np.ndarray
    i: np.ndarray
    o: np.ndarray
    c_tilde: np.ndarray
    h: np.ndarray
    c: np.ndarray
    p: np.ndarray

    @property
    def state(self) -> LstmState:
        return LstmState(self.h, self.c)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _stacked(params: ModelParams, prefix: str) -> np.ndarray:
    return np.concatenate([params[f"{prefix}_{g}"] for g in GATES], axis=0)


def embed_bag(bag: Sequence[int], params: ModelParams) -> np.ndarray:
    """Sum of the atom embedding rows indexed by ``bag`` (zero for an empty bag)."""
    E_a = params["E_a"]
    phi = np.zeros(E_a.shape[1])
    for a in bag:
        if not 0 <= a < E_a.shape[0]:
            raise KeyError(f"atom index {a} outside atom vocabulary of size {E_a.shape[0]}")
        phi += E_a[a]
    return phi


def _atom_terms(params: ModelParams, phi: np.ndarray) -> np.ndarray:
    """``A_g @ phi + b_g`` for all gates, stacked (..., 4H)."""
    return phi @ _stacked(params, "A").T + _stacked(params, "b")


def _step_batch(params: ModelParams, h: np.ndarray, c: np.ndarray, words: np.ndarray,
                atom_terms: np.ndarray):
    H = params.config.hidden_dim
    z = params["E_w"][words] @ _stacked(params, "W").T + h @ _stacked(params, "U").T + atom_terms
    f = sigmoid(z[:, :H])
    i = sigmoid(z[:, H:2 * H])
    o = sigmoid(z[:, 2 * H:3 * H])
    g = np.tanh(z[:, 3 * H:])
    c_new = f * c + i * g
    h_new = o * c_new
    logits = np.tanh(h_new @ params["W_p"].T + params["b_p"]) @ params["U_p"].T + params["d"]
    return f, i, o, g, h_new, c_new, logits


def lstm_step(params: ModelParams, state: LstmState, prev_word: int, phi: np.ndarray) -> StepTrace:
    if not 0 <= prev_word < params.config.vocab_size:
        raise IndexError(f"word index {prev_word} outside vocabulary of size {params.config.vocab_size}")
    f, i, o, g, h, c, logits = _step_batch(
        params, state.h[None], state.c[None], np.array([prev_word]), _atom_terms(params, phi)[None])
    trace = StepTrace(f[0], i[0], o[0], g[0], h[0], c[0], _softmax(logits)[0])
    for name in ("h", "c", "p"):
        if not np.all(np.isfinite(getattr(trace, name))):
            raise DivergenceError(f"non-finite {name} in lstm_step")
    return trace


# ---------------------------------------------------------------------------
# batched forward / backward

@dataclass
class Batch:
    inputs: np.ndarray    # (B, T) previous words, starting with <bos>
    targets: np.ndarray   # (B, T) next words, ending with <eos>
    mask: np.ndarray      # (B, T) 1.0 on real positions
    bags: np.ndarray      # (B, A) multi-hot atom indicator

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def make_batch(examples: Sequence[tuple[Sequence[int], Sequence[int]]], atom_vocab_size: int) -> Batch:
    """Pad ``(caption ids incl. <bos>/<eos>, atom indices)`` pairs into a batch."""
    if not examples:
        raise ValueError("empty batch")
    B = len(examples)
    T = max(len(ids) for ids, _ in examples) - 1
    if T < 1:
        raise ValueError("captions must contain at least <bos> and one target")
    inputs = np.full((B, T), EOS_ID, dtype=np.int64)
    targets = np.full((B, T), EOS_ID, dtype=np.int64)
    mask = np.zeros((B, T))
    bags = np.zeros((B, atom_vocab_size))
    for b, (ids, bag) in enumerate(examples):
        n = len(ids) - 1
        if n < 1:
            raise ValueError("captions must contain at least <bos> and one target")
        inputs[b, :n] = ids[:-1]
        targets[b, :n] = ids[1:]
        mask[b, :n] = 1.0
        for a in bag:
            if not 0 <= a < atom_vocab_size:
                raise KeyError(f"atom index {a} outside atom vocabulary of size {atom_vocab_size}")
            bags[b, a] = 1.0
    return Batch(inputs, targets, mask, bags)


def _check_indices(params: ModelParams, batch: Batch) -> None:
    V = params.config.vocab_size
    if batch.inputs.min() < 0 or batch.inputs.max() >= V or batch.targets.min() < 0 or batch.targets.max() >= V:
        raise IndexError(f"word index outside vocabulary of size {V}")
    if batch.bags.shape[1] != params.config.atom_vocab_size:
        raise ValueError("batch atom width does not match the model's atom vocabulary")


def forward(params: ModelParams, batch: Batch, rng: np.random.Generator | None = None):
    """Per-example negative log-likelihoods and the cache needed by :func:`backward`.

    Dropout is applied to the word embeddings and to the hidden state feeding
    the output layer when the config enables it and ``rng`` is given.
    """
    _check_indices(params, batch)
    cfg = params.config
    H = cfg.hidden_dim
    B, T = batch.inputs.shape

    emb = params["E_w"][batch.inputs]
    drop_in = drop_out = None
    if cfg.dropout and rng is not None and cfg.dropout_rate > 0:
        keep = 1.0 - cfg.dropout_rate
        drop_in = (rng.random(emb.shape) < keep) / keep
        drop_out = (rng.random((B, T, H)) < keep) / keep
        emb = emb * drop_in

    phi = batch.bags @ params["E_a"]
    W, U = _stacked(params, "W"), _stacked(params, "U")
    xz = emb @ W.T + _atom_terms(params, phi)[:, None, :]

    gates = np.empty((B, T, 4 * H))
    cs = np.empty((B, T + 1, H))
    hs = np.empty((B, T + 1, H))
    cs[:, 0] = 0.0
    hs[:, 0] = 0.0
    for t in range(T):
        z = xz[:, t] + hs[:, t] @ U.T
        a = gates[:, t]
        a[:, :3 * H] = sigmoid(z[:, :3 * H])
        a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        cs[:, t + 1] = a[:, :H] * cs[:, t] + a[:, H:2 * H] * a[:, 3 * H:]
        hs[:, t + 1] = a[:, 2 * H:3 * H] * cs[:, t + 1]

    h_out = hs[:, 1:] if drop_out is None else hs[:, 1:] * drop_out
    q = np.tanh(h_out @ params["W_p"].T + params["b_p"])
    logp = _log_softmax(q @ params["U_p"].T + params["d"])
    tok_lp = np.take_along_axis(logp, batch.targets[..., None], axis=-1)[..., 0]
    nll = -(tok_lp * batch.mask).sum(axis=1)
    if not np.all(np.isfinite(nll)):
        raise DivergenceError("non-finite negative log-likelihood")
    cache = dict(emb=emb, drop_in=drop_in, drop_out=drop_out, phi=phi, gates=gates,
                 cs=cs, hs=hs, h_out=h_out, q=q, logp=logp)
    return nll, cache


def backward(params: ModelParams, batch: Batch, cache: dict, scale: float) -> dict[str, np.ndarray]:
    """Gradients of ``scale * sum(nll)`` by backpropagation through time."""
    cfg = params.config
    H = cfg.hidden_dim
    B, T = batch.inputs.shape
    W, U = _stacked(params, "W"), _stacked(params, "U")
    A = _stacked(params, "A")
    gates, cs, hs = cache["gates"], cache["cs"], cache["hs"]

    dlogits = np.exp(cache["logp"])
    np.put_along_axis(dlogits, batch.targets[..., None],
                      np.take_along_axis(dlogits, batch.targets[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= (batch.mask * scale)[..., None]

    q = cache["q"]
    grads = {}
    dl2 = dlogits.reshape(B * T, -1)
    grads["U_p"] = dl2.T @ q.reshape(B * T, -1)
    grads["d"] = dl2.sum(axis=0)
    dpre = (dlogits @ params["U_p"]) * (1.0 - q * q)
    dp2 = dpre.reshape(B * T, -1)
    grads["W_p"] = dp2.T @ cache["h_out"].reshape(B * T, H)
    grads["b_p"] = dp2.sum(axis=0)
    dh_out = dpre @ params["W_p"]
    if cache["drop_out"] is not None:
        dh_out = dh_out * cache["drop_out"]

    dz = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in reversed(range(T)):
        a = gates[:, t]
        f, i, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        c, c_prev = cs[:, t + 1], cs[:, t]
        dh = dh_out[:, t] + dh_next
        dc = dh * o + dc_next
        d = dz[:, t]
        d[:, :H] = dc * c_prev * f * (1.0 - f)
        d[:, H:2 * H] = dc * g * i * (1.0 - i)
        d[:, 2 * H:3 * H] = dh * c * o * (1.0 - o)
        d[:, 3 * H:] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = d @ U

    dz2 = dz.reshape(B * T, 4 * H)
    dW = dz2.T @ cache["emb"].reshape(B * T, -1)
    dU = dz2.T @ hs[:, :T].reshape(B * T, H)
    dz_sum = dz.sum(axis=1)
    dA = dz_sum.T @ cache["phi"]
    db = dz_sum.sum(axis=0)
    for k, g in enumerate(GATES):
        rows = slice(k * H, (k + 1) * H)
        grads[f"W_{g}"] = dW[rows]
        grads[f"U_{g}"] = dU[rows]
        grads[f"A_{g}"] = dA[rows]
        grads[f"b_{g}"] = db[rows]

    grads["E_a"] = batch.bags.T @ (dz_sum @ A)
    demb = dz @ W
    if cache["drop_in"] is not None:
        demb = demb * cache["drop_in"]
    dE_w = np.zeros_like(params["E_w"])
    np.add.at(dE_w, batch.inputs.reshape(-1), demb.reshape(B * T, -1))
    grads["E_w"] = dE_w
    return {name: grads[name] for name in param_shapes(cfg)}


def sequence_nll(params: ModelParams, caption: Sequence[int], bag: Sequence[int]) -> float:
    """``-sum_t log p(w_t | w_<t, bag)`` for one caption given as ids incl. <bos>/<eos>."""
    if len(caption) < 2:
        raise ValueError("caption must contain <bos> and at least one target token")
    nll, _ = forward(params, make_batch([(caption, bag)], params.config.atom_vocab_size))
    return float(nll[0])


def batch_nll(params: ModelParams, examples: Sequence[tuple[Sequence[int], Sequence[int]]],
              batch_size: int = 256) -> np.ndarray:
    """Per-example NLL for many captions, evaluated in fixed-order chunks."""
    out = []
    for s in range(0, len(examples), batch_size):
        nll, _ = forward(params, make_batch(examples[s:s + batch_size], params.config.atom_vocab_size))
        out.append(nll)
    return np.concatenate(out) if out else np.zeros(0)


# ---------------------------------------------------------------------------
# decoding

@dataclass(frozen=True)
class DecodeConfig:
    beam_width: int = 5
    max_len: int = 30

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_len < 0:
            raise ValueError("max_len must be >= 0")


def generate_caption(params: ModelParams, bag: Sequence[int],
                     decode: DecodeConfig = DecodeConfig()) -> list[int]:
    """Beam search for the highest log-probability caption (ids without <bos>/<eos>).

    Candidates are ranked by score, then by the rank of their parent beam,
    then by token index, so ties always resolve toward lower indices and a
    width of one reproduces greedy argmax decoding.
    """
    H = params.config.hidden_dim
    atom_terms = _atom_terms(params, embed_bag(bag, params))[None]
    seqs: list[list[int]] = [[]]
    scores = np.zeros(1)
    h = np.zeros((1, H))
    c = np.zeros((1, H))
    last = np.array([BOS_ID])
    finished: list[tuple[float, list[int]]] = []

    for _ in range(decode.max_len):
        *_, h, c, logits = _step_batch(params, h, c, last, np.repeat(atom_terms, len(seqs), axis=0))
        if not np.all(np.isfinite(logits)):
            raise DivergenceError("non-finite logits during decoding")
        logp = _log_softmax(logits)
        logp[:, BOS_ID] = -np.inf
        cand = scores[:, None] + logp
        n_beams, V = cand.shape
        beam_idx = np.repeat(np.arange(n_beams), V)
        tok_idx = np.tile(np.arange(V), n_beams)
        order = np.lexsort((tok_idx, beam_idx, -cand.reshape(-1)))[:decode.beam_width]

        keep_beam, keep_tok, keep_score = [], [], []
        for j in order:
            b, tok, s = int(beam_idx[j]), int(tok_idx[j]), float(cand.reshape(-1)[j])
            if tok == EOS_ID:
                finished.append((s, seqs[b]))
            else:
                keep_beam.append(b)
                keep_tok.append(tok)
                keep_score.append(s)
        if not keep_beam:
            break
        best_done = max((s for s, _ in finished), default=-np.inf)
        if best_done >= max(keep_score):
            break
        seqs = [seqs[b] + [t] for b, t in zip(keep_beam, keep_tok)]
        scores = np.array(keep_score)
        h, c = h[keep_beam], c[keep_beam]
        last = np.array(keep_tok)
    else:
        finished.extend(zip(scores.tolist(), seqs))

    best_score, best_seq = finished[0]
    for s, seq in finished[1:]:
        if s > best_score:
            best_score, best_seq = s, seq
    return list(best_seq)


def greedy_rollout(params: ModelParams, bag: Sequence[int], max_len: int) -> list[int]:
    """Repeated argmax through :func:`lstm_step`; the reference for width-1 beams."""
    phi = embed_bag(bag, params)
    state = LstmState.zeros(params.config.hidden_dim)
    word, out = BOS_ID, []
    for _ in range(max_len):
        trace = lstm_step(params, state, word, phi)
        p = trace.p.copy()
        p[BOS_ID] = -1.0
        word = int(np.argmax(p))
        if word == EOS_ID:
            break
        out.append(word)
        state = trace.state
    return out


def params_from_arrays(config: ModelConfig, arrays: Iterable[tuple[str, np.ndarray]]) -> ModelParams:
    tensors = dict(arrays)
    shapes = param_shapes(config)
    if set(tensors) != set(shapes):
        raise ValueError("tensor names do not match the model configuration")
    for name, shape in shapes.items():
        if tensors[name].shape != shape:
            raise ValueError(f"tensor {name} has shape {tensors[name].shape}, expected {shape}")
    return ModelParams(config, {name: np.asarray(tensors[name], dtype=np.float64) for name in shapes})
