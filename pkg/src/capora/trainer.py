"""Maximum-likelihood training of the oracle LM with Adadelta and early stopping."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .lm import (
    DivergenceError,
    ModelConfig,
    ModelParams,
    backward,
    batch_nll,
    forward,
    init_params,
    make_batch,
)
from .util import derive_seed

Example = tuple[Sequence[int], Sequence[int]]   # (caption ids with <bos>/<eos>, atom indices)


@dataclass(frozen=True)
class TrainConfig:
    minibatch: int = 128
    patience: int = 2000
    weight_decay: float = 0.0
    rho: float = 0.95
    eps: float = 1e-6
    max_updates: int = 100_000
    seed: int = 0
    clip_norm: float | None = 5.0
    min_improvement: float = 1e-5
    eval_every: int | None = None   # None: one pass over the training set

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


# ---------------------------------------------------------------------------
# gradients

def compute_gradients(params: ModelParams, batch: Sequence[Example],
                      rng: np.random.Generator | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Batch-mean NLL and its exact gradient by backpropagation through time."""
    if len(batch) == 0:
        raise ValueError("cannot compute gradients of an empty batch")
    b = make_batch(batch, params.config.atom_vocab_size)
    nll, cache = forward(params, b, rng)
    grads = backward(params, b, cache, 1.0 / b.size)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {name}")
    return float(nll.mean()), grads


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


# ---------------------------------------------------------------------------
# Adadelta

@dataclass(frozen=True)
class AdadeltaState:
    sq_grad: dict[str, np.ndarray]
    sq_update: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdadeltaState":
        return cls({k: np.zeros_like(v) for k, v in params.tensors.items()},
                   {k: np.zeros_like(v) for k, v in params.tensors.items()})


def adadelta_step(state: AdadeltaState, params: ModelParams, grads: dict[str, np.ndarray],
                  rho: float = 0.95, eps: float = 1e-6,
                  weight_decay: float = 0.0) -> tuple[ModelParams, AdadeltaState]:
    """One Adadelta update; L2 weight decay is folded into the gradient first."""
    new_p, new_g2, new_d2 = {}, {}, {}
    for name, p in params.tensors.items():
        g = grads[name]
        if weight_decay:
            g = g + weight_decay * p
        g2 = rho * state.sq_grad[name] + (1.0 - rho) * g * g
        delta = -np.sqrt(state.sq_update[name] + eps) / np.sqrt(g2 + eps) * g
        new_d2[name] = rho * state.sq_update[name] + (1.0 - rho) * delta * delta
        new_g2[name] = g2
        new_p[name] = p + delta
    return ModelParams(params.config, new_p), AdadeltaState(new_g2, new_d2)


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainLog:
    entries: list[dict] = field(default_factory=list)
    best_update: int = 0
    best_valid_nll: float = math.inf
    stop_reason: str = ""
    updates: int = 0
    clipped_updates: int = 0
    clip_norm: float | None = None

    @property
    def train_nll(self) -> list[float]:
        return [e["train_nll"] for e in self.entries if "train_nll" in e]

    @property
    def valid_history(self) -> list[tuple[int, float]]:
        return [(e["update"], e["valid_nll"]) for e in self.entries if "valid_nll" in e]

    def write_jsonl(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(e, sort_keys=True) + "\n")

    def summary(self) -> dict:
        return {"best_update": self.best_update, "best_valid_nll": self.best_valid_nll,
                "stop_reason": self.stop_reason, "updates": self.updates,
                "clipped_updates": self.clipped_updates, "clip_norm": self.clip_norm}


@dataclass
class TrainResult:
    params: ModelParams
    log: TrainLog


def validation_nll(params: ModelParams, examples: Sequence[Example]) -> float:
    """Mean per-caption NLL."""
    return float(batch_nll(params, examples).mean())


def train_model(train: Sequence[Example], valid: Sequence[Example], model_config: ModelConfig,
                config: TrainConfig = TrainConfig(),
                valid_fn: Callable[[ModelParams], float] | None = None,
                init: ModelParams | None = None) -> TrainResult:
    """Minibatch Adadelta on the mean caption NLL with validation early stopping.

    Validation runs every ``eval_every`` updates (default: one pass over the
    training set).  Training stops at the first evaluation at which
    ``patience`` or more updates have passed since the last improvement, or
    after ``max_updates``.  The parameters with the best validation NLL are
    returned.  ``valid_fn`` replaces the validation objective when given.
    """
    if not train:
        raise ValueError("training set is empty")
    if valid_fn is None:
        if not valid:
            raise ValueError("validation set is empty")
        valid_fn = lambda p: validation_nll(p, valid)  # noqa: E731

    params = init if init is not None else init_params(model_config, derive_seed(config.seed, "init"))
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    dropout_rng = np.random.default_rng(derive_seed(config.seed, "dropout"))
    state = AdadeltaState.zeros_like(params)
    eval_every = config.eval_every or math.ceil(len(train) / config.minibatch)

    log = TrainLog(clip_norm=config.clip_norm)
    best = params
    update = 0

    def evaluate() -> bool:
        nonlocal best
        v = valid_fn(params)
        log.entries.append({"update": update, "valid_nll": v})
        if not math.isfinite(v):
            log.stop_reason = "divergence"
            raise DivergenceError(f"non-finite validation NLL at update {update}", log)
        if v < log.best_valid_nll - config.min_improvement:
            log.best_valid_nll, log.best_update, best = v, update, params
            return False
        return update - log.best_update >= config.patience

    stop = False
    while not stop and update < config.max_updates:
        order = shuffle_rng.permutation(len(train))
        for s in range(0, len(order), config.minibatch):
            batch = [train[j] for j in order[s:s + config.minibatch]]
            try:
                loss, grads = compute_gradients(params, batch, dropout_rng)
            except DivergenceError as exc:
                log.stop_reason = "divergence"
                log.updates = update
                raise DivergenceError(str(exc), log) from None
            if config.clip_norm is not None:
                norm = global_norm(grads)
                if norm > config.clip_norm:
                    grads = {k: g * (config.clip_norm / norm) for k, g in grads.items()}
                    log.clipped_updates += 1
            params, state = adadelta_step(state, params, grads, config.rho, config.eps,
                                          config.weight_decay)
            update += 1
            log.entries.append({"update": update, "train_nll": loss})
            if update % eval_every == 0 and evaluate():
                log.stop_reason = "early_stopping"
                stop = True
                break
            if update >= config.max_updates:
                log.stop_reason = "max_updates"
                break

    if update % eval_every != 0 or not log.valid_history:
        evaluate()
    log.updates = update
    return TrainResult(best, log)


# ---------------------------------------------------------------------------
# random search

@dataclass(frozen=True)
class SearchSpace:
    atom_embed_dim: tuple[int, int] = (128, 1024)
    word_embed_dim: tuple[int, int] = (128, 1024)
    hidden_dim: tuple[int, int] = (128, 1024)
    weight_decay: tuple[float, float] = (1e-6, 1e-2)
    dropout: tuple[bool, ...] = (False, True)

    def __post_init__(self):
        for name in ("atom_embed_dim", "word_embed_dim", "hidden_dim", "weight_decay"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: low {lo} exceeds high {hi}")
        if self.weight_decay[0] <= 0:
            raise ValueError("weight decay range must be positive for log-uniform sampling")

    @classmethod
    def from_json(cls, obj: dict) -> "SearchSpace":
        return cls(**{k: tuple(v) for k, v in obj.items()})


@dataclass
class Trial:
    index: int
    seed: int
    model_config: ModelConfig
    train_config: TrainConfig
    valid_nll: float
    log: TrainLog
    params: ModelParams | None = None

    def describe(self) -> dict:
        return {"index": self.index, "seed": self.seed, "valid_nll": self.valid_nll,
                "model": self.model_config.to_json(), "train": self.train_config.to_json(),
                **{f"log_{k}": v for k, v in self.log.summary().items()}}


@dataclass
class SearchResult:
    best: Trial
    trials: list[Trial]


def sample_trials(space: SearchSpace, n_trials: int, base_model: ModelConfig,
                  base_train: TrainConfig, seed: int) -> list[tuple[ModelConfig, TrainConfig]]:
    rng = np.random.default_rng(seed)
    lo, hi = np.log(space.weight_decay[0]), np.log(space.weight_decay[1])
    out = []
    for i in range(n_trials):
        model = replace(
            base_model,
            atom_embed_dim=int(rng.integers(space.atom_embed_dim[0], space.atom_embed_dim[1] + 1)),
            word_embed_dim=int(rng.integers(space.word_embed_dim[0], space.word_embed_dim[1] + 1)),
            hidden_dim=int(rng.integers(space.hidden_dim[0], space.hidden_dim[1] + 1)),
            dropout=bool(space.dropout[int(rng.integers(len(space.dropout)))]),
        )
        wd = float(np.exp(rng.uniform(lo, hi)))
        out.append((model, replace(base_train, weight_decay=wd, seed=derive_seed(seed, "trial", i))))
    return out


def _run_trial(args) -> Trial:
    i, model, train_cfg, train, valid = args
    result = train_model(train, valid, model, train_cfg)
    return Trial(i, train_cfg.seed, model, train_cfg, result.log.best_valid_nll, result.log, result.params)


def random_search(space: SearchSpace, n_trials: int, train: Sequence[Example], valid: Sequence[Example],
                  base_model: ModelConfig, base_train: TrainConfig = TrainConfig(), seed: int = 0,
                  jobs: int = 1) -> SearchResult:
    """Train ``n_trials`` randomly configured models; the best has the lowest validation NLL."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    work = [(i, m, t, train, valid) for i, (m, t) in
            enumerate(sample_trials(space, n_trials, base_model, base_train, seed))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(_run_trial, work))
    else:
        trials = [_run_trial(w) for w in work]
    best = min(trials, key=lambda t: (t.valid_nll, t.index))
    return SearchResult(best, trials)


# ---------------------------------------------------------------------------
# gradient verification

@dataclass
class GradCheckReport:
    max_rel_error: float
    tensor: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    per_tensor: dict[str, float]
    n_coordinates: int

    def to_json(self) -> dict:
        return {"max_rel_error": self.max_rel_error, "tensor": self.tensor, "index": list(self.index),
                "analytic": self.analytic, "numeric": self.numeric, "per_tensor": self.per_tensor,
                "n_coordinates": self.n_coordinates}


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(params: ModelParams, batch: Sequence[Example], grads: dict[str, np.ndarray],
                    step: float = 1e-5) -> GradCheckReport:
    """Compare ``grads`` with central differences of the batch-mean NLL, coordinate by coordinate."""
    b = make_batch(batch, params.config.atom_vocab_size)
    work = params.copy()

    def loss() -> float:
        nll, _ = forward(work, b)
        return float(nll.mean())

    worst = (-1.0, "", (), 0.0, 0.0)
    per_tensor, n = {}, 0
    for name in params.names():
        arr = work.tensors[name]
        tensor_worst = 0.0
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up = loss()
            arr[idx] = orig - step
            down = loss()
            arr[idx] = orig
            numeric = (up - down) / (2.0 * step)
            analytic = float(grads[name][idx])
            err = relative_error(analytic, numeric)
            tensor_worst = max(tensor_worst, err)
            if err > worst[0]:
                worst = (err, name, tuple(int(i) for i in idx), analytic, numeric)
            n += 1
        per_tensor[name] = tensor_worst
    return GradCheckReport(worst[0], worst[1], worst[2], worst[3], worst[4], per_tensor, n)


def gradcheck_problem(config: ModelConfig, seed: int, n_examples: int = 4, scale: float = 1.0,
                      max_len: int = 3) -> tuple[ModelParams, list[Example]]:
    """A random model and batch that touches every word and every atom.

    Short captions keep the loss small, which keeps the round-off of the
    central differences well below the gradients being checked.
    """
    rng = np.random.default_rng(seed)
    params = init_params(config, seed).map(lambda _, v: rng.uniform(-scale, scale, size=v.shape))
    V, A = config.vocab_size, config.atom_vocab_size
    words = list(rng.permutation(np.arange(3, V))) if V > 3 else []
    batch = []
    for e in range(n_examples):
        body = [int(w) for w in rng.integers(2, V, size=int(rng.integers(1, max_len + 1)))] if V > 2 else []
        body += [int(w) for w in words[e::n_examples]]
        if e == 0:
            bag = list(range(A))
        else:
            bag = sorted(int(a) for a in rng.choice(A, size=int(rng.integers(0, A + 1)), replace=False))
        batch.append(([0, *body, 1], bag))
    return params, batch


def gradient_check(config: ModelConfig, seed: int = 0, step: float = 1e-5) -> GradCheckReport:
    params, batch = gradcheck_problem(config, seed)
    _, grads = compute_gradients(params, batch)
    return check_gradients(params, batch, grads, step)
