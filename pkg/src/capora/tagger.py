"""Greedy averaged-perceptron part-of-speech tagger over the Penn Treebank tagset."""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .checkpoint import load_container, save_container
from .corpus import CaptionRecord, DataError

PTB_TAGS = frozenset(
    ln.strip()
    for ln in resources.files("capora.data").joinpath("ptb_tags.txt").read_text(encoding="utf-8").splitlines()
    if ln.strip()
)

START = ("-START-", "-START2-")
END = ("-END-", "-END2-")

Tagged = tuple[list[str], list[str]]


def read_conll(path: str | Path) -> list[Tagged]:
    """Read ``token<TAB>tag`` lines, sentences separated by blank lines."""
    sents, toks, tags = [], [], []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                if toks:
                    sents.append((toks, tags))
                    toks, tags = [], []
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected token<TAB>tag")
            toks.append(parts[0])
            tags.append(parts[1])
    if toks:
        sents.append((toks, tags))
    return sents


def write_conll(sents: Iterable[Tagged], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for toks, tags in sents:
            for t, g in zip(toks, tags):
                fh.write(f"{t}\t{g}\n")
            fh.write("\n")


def _normalize(word: str) -> str:
    if "-" in word and word[0] != "-":
        return "!HYPHEN"
    if word.isdigit() and len(word) == 4:
        return "!YEAR"
    if word[:1].isdigit():
        return "!DIGITS"
    return word.lower()


def _features(i: int, word: str, context: Sequence[str], prev: str, prev2: str) -> list[str]:
    """Feature strings for position ``i`` (offset by two START pads in ``context``)."""
    i += len(START)
    return [
        "bias",
        "i suffix " + word[-3:],
        "i pref1 " + word[:1],
        "i-1 tag " + prev,
        "i-2 tag " + prev2,
        "i tag+i-2 tag " + prev + " " + prev2,
        "i word " + context[i],
        "i-1 tag+i word " + prev + " " + context[i],
        "i-1 word " + context[i - 1],
        "i-1 suffix " + context[i - 1][-3:],
        "i-2 word " + context[i - 2],
        "i+1 word " + context[i + 1],
        "i+1 suffix " + context[i + 1][-3:],
        "i+2 word " + context[i + 2],
        "i shape " + ("d" if any(ch.isdigit() for ch in word) else "")
        + ("h" if "-" in word else "") + ("'" if "'" in word else ""),
    ]


@dataclass
class TaggerModel:
    weights: dict[str, dict[str, float]]
    tagdict: dict[str, str]
    classes: tuple[str, ...]
    metadata: dict = field(default_factory=dict)

    def _predict(self, feats: Sequence[str]) -> str:
        scores: dict[str, float] = defaultdict(float)
        for f in feats:
            w = self.weights.get(f)
            if w:
                for tag, v in w.items():
                    scores[tag] += v
        return max(self.classes, key=lambda c: (scores.get(c, 0.0), c))

    def save(self, path: str | Path) -> None:
        feats = sorted(self.weights)
        col = {c: j for j, c in enumerate(self.classes)}
        mat = np.zeros((len(feats), len(self.classes)))
        for r, f in enumerate(feats):
            for tag, v in self.weights[f].items():
                mat[r, col[tag]] = v
        config = {"kind": "pos-tagger", "classes": list(self.classes), "features": feats,
                  "tagdict": dict(sorted(self.tagdict.items())), "metadata": self.metadata}
        save_container(path, config, {"weights": mat})

    @classmethod
    def load(cls, path: str | Path) -> "TaggerModel":
        config, tensors = load_container(path)
        if config.get("kind") != "pos-tagger":
            raise DataError(f"{path}: not a tagger model (kind={config.get('kind')!r})")
        classes = tuple(config["classes"])
        mat = tensors["weights"]
        weights = {}
        for r, f in enumerate(config["features"]):
            row = {classes[j]: float(mat[r, j]) for j in np.flatnonzero(mat[r])}
            if row:
                weights[f] = row
        return cls(weights, dict(config["tagdict"]), classes, config.get("metadata", {}))


def tag_tokens(model: TaggerModel, tokens: Sequence[str]) -> list[str]:
    """Greedy left-to-right tagging; closed-class dictionary words bypass the scorer."""
    context = [*START, *(_normalize(w) for w in tokens), *END]
    prev, prev2 = START
    out = []
    for i, word in enumerate(tokens):
        tag = model.tagdict.get(word)
        if tag is None:
            tag = model._predict(_features(i, word, context, prev, prev2))
        out.append(tag)
        prev2, prev = prev, tag
    return out


def accuracy(model: TaggerModel, sents: Iterable[Tagged]) -> float:
    right = total = 0
    for toks, tags in sents:
        guess = tag_tokens(model, toks)
        right += sum(g == t for g, t in zip(guess, tags))
        total += len(tags)
    return right / total if total else float("nan")


def _build_tagdict(sents: Sequence[Tagged], freq_threshold: int) -> dict[str, str]:
    counts: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for toks, tags in sents:
        for w, t in zip(toks, tags):
            counts[w][t] += 1
    return {w: next(iter(tc)) for w, tc in counts.items()
            if len(tc) == 1 and sum(tc.values()) >= freq_threshold}


def train_tagger(tagged_corpus: Sequence[Tagged], epochs: int = 5, seed: int = 0,
                 heldout_fraction: float = 0.1, dict_threshold: int = 20) -> TaggerModel:
    """Train an averaged perceptron; a seeded held-out slice measures accuracy.

    Words seen at least ``dict_threshold`` times, always with the same tag,
    go to the tag dictionary and are never scored.
    """
    if not tagged_corpus:
        raise ValueError("cannot train a tagger on an empty corpus")
    for n, (toks, tags) in enumerate(tagged_corpus):
        if len(toks) != len(tags):
            raise ValueError(f"sentence {n}: {len(toks)} tokens but {len(tags)} tags")
        bad = sorted(set(tags) - PTB_TAGS)
        if bad:
            raise ValueError(f"sentence {n}: tags outside the Penn Treebank set: {bad}")

    rng = random.Random(seed)
    order = list(range(len(tagged_corpus)))
    rng.shuffle(order)
    n_held = int(len(order) * heldout_fraction)
    held = [tagged_corpus[j] for j in order[:n_held]]
    train = [tagged_corpus[j] for j in order[n_held:]]

    tagdict = _build_tagdict(train, dict_threshold)
    classes = tuple(sorted({t for _, tags in train for t in tags}))
    weights: dict[str, dict[str, float]] = defaultdict(dict)
    totals: dict[tuple[str, str], float] = defaultdict(float)
    stamps: dict[tuple[str, str], int] = defaultdict(int)
    model = TaggerModel(weights, tagdict, classes)
    step = 0

    def bump(feat: str, tag: str, delta: float) -> None:
        key = (feat, tag)
        w = weights[feat].get(tag, 0.0)
        totals[key] += (step - stamps[key]) * w
        stamps[key] = step
        weights[feat][tag] = w + delta

    for _ in range(epochs):
        for toks, tags in train:
            context = [*START, *(_normalize(w) for w in toks), *END]
            prev, prev2 = START
            for i, (word, truth) in enumerate(zip(toks, tags)):
                guess = tagdict.get(word)
                if guess is None:
                    feats = _features(i, word, context, prev, prev2)
                    guess = model._predict(feats)
                    step += 1
                    if guess != truth:
                        for f in feats:
                            bump(f, truth, 1.0)
                            bump(f, guess, -1.0)
                prev2, prev = prev, guess
        rng.shuffle(train)

    averaged: dict[str, dict[str, float]] = {}
    for feat, row in weights.items():
        avg = {}
        for tag, w in row.items():
            key = (feat, tag)
            total = totals[key] + (step - stamps[key]) * w
            value = total / step if step else 0.0
            if value:
                avg[tag] = value
        if avg:
            averaged[feat] = avg

    model = TaggerModel(averaged, tagdict, classes)
    model.metadata = {
        "epochs": epochs, "seed": seed, "n_train": len(train), "n_heldout": len(held),
        "heldout_accuracy": accuracy(model, held) if held else None,
        "dict_threshold": dict_threshold,
    }
    return model


def load_pretagged(records: Iterable[CaptionRecord]) -> list[Tagged]:
    """Validated (tokens, gold tags) pairs for records that carry their own tags."""
    out = []
    for r in records:
        if r.gold_tags is None:
            raise DataError(f"record {r.id!r} has no gold tags")
        if len(r.gold_tags) != len(r.tokens):
            raise DataError(f"record {r.id!r}: {len(r.gold_tags)} tags for {len(r.tokens)} tokens")
        bad = sorted(set(r.gold_tags) - PTB_TAGS)
        if bad:
            raise DataError(f"record {r.id!r}: tags outside the Penn Treebank set: {bad}")
        out.append((list(r.tokens), list(r.gold_tags)))
    return out


def fixture_model() -> TaggerModel:
    """The committed tagger trained on the bundled tagged corpus."""
    with resources.as_file(resources.files("capora.data").joinpath("tagger_fixture.ckpt")) as p:
        return TaggerModel.load(p)


def fixture_corpus() -> list[Tagged]:
    with resources.as_file(resources.files("capora.data").joinpath("tagged_corpus.tsv")) as p:
        return read_conll(p)
