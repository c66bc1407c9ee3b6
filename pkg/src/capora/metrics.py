"""Corpus-level caption metrics: BLEU-1..4, CIDEr and METEOR-lite.

METEOR-lite aligns unigrams by exact match and then by lemma match, with no
synonym stage, so its values are not comparable to full METEOR.  CIDEr is
the basic TF-IDF formulation with no length penalty.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

from .atomizer import AtomCategory, lemmatize
from .corpus import DataError, tokenize

METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5


@dataclass(frozen=True)
class EvalInstance:
    candidate: tuple[str, ...]
    references: tuple[tuple[str, ...], ...]
    id: str | None = None

    def __post_init__(self):
        if not self.references:
            raise ValueError("an evaluation instance needs at least one reference")

    @classmethod
    def of(cls, candidate: Sequence[str], references: Sequence[Sequence[str]], id: str | None = None):
        return cls(tuple(candidate), tuple(tuple(r) for r in references), id)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------------------
# BLEU

@dataclass
class BleuStats:
    matches: list[int]
    totals: list[int]
    cand_len: int
    ref_len: int


def bleu_stats(instances: Sequence[EvalInstance], max_n: int = 4) -> BleuStats:
    matches, totals = [0] * max_n, [0] * max_n
    c = r = 0
    for inst in instances:
        cand = inst.candidate
        c += len(cand)
        r += min((abs(len(ref) - len(cand)), len(ref)) for ref in inst.references)[1]
        for n in range(1, max_n + 1):
            cand_counts = ngrams(cand, n)
            max_ref: Counter = Counter()
            for ref in inst.references:
                max_ref |= ngrams(ref, n)
            matches[n - 1] += sum(min(cnt, max_ref[g]) for g, cnt in cand_counts.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    return BleuStats(matches, totals, c, r)


def brevity_penalty(cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    return 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)


def bleu(instances: Sequence[EvalInstance], max_n: int = 4) -> dict[int, float]:
    """Corpus BLEU-1..max_n with per-reference clipping and no smoothing."""
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be between 1 and 4")
    st = bleu_stats(instances, max_n)
    bp = brevity_penalty(st.cand_len, st.ref_len)
    scores, log_sum = {}, 0.0
    for n in range(1, max_n + 1):
        m, t = st.matches[n - 1], st.totals[n - 1]
        if m == 0 or t == 0 or log_sum == -math.inf:
            log_sum = -math.inf
            scores[n] = 0.0
            continue
        log_sum += math.log(m / t)
        scores[n] = bp * math.exp(log_sum / n)
    return scores


# ---------------------------------------------------------------------------
# CIDEr

def _tfidf(counts: Counter, df: Counter, log_n: float) -> tuple[dict, float]:
    vec = {g: tf * (log_n - math.log(max(1.0, df[g]))) for g, tf in counts.items()}
    return vec, math.sqrt(sum(v * v for v in vec.values()))


def _cosine(a: dict, na: float, b: dict, nb: float) -> float:
    if na == 0.0 or nb == 0.0:
        return 0.0
    if len(a) > len(b):
        a, b = b, a
    return min(1.0, max(0.0, sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)))


def cider_scores(instances: Sequence[EvalInstance], n: int = 4) -> list[float]:
    """Per-instance CIDEr; document frequencies count each instance's reference set once."""
    log_n = math.log(float(len(instances))) if instances else 0.0
    df: Counter = Counter()
    for inst in instances:
        seen = set()
        for ref in inst.references:
            for k in range(1, n + 1):
                seen.update(ngrams(ref, k))
        df.update(seen)
    out = []
    for inst in instances:
        total = 0.0
        for k in range(1, n + 1):
            hv, hn = _tfidf(ngrams(inst.candidate, k), df, log_n)
            sims = []
            for ref in inst.references:
                rv, rn = _tfidf(ngrams(ref, k), df, log_n)
                sims.append(_cosine(hv, hn, rv, rn))
            total += sum(sims) / len(sims)
        out.append(10.0 * total / n)
    return out


def cider(instances: Sequence[EvalInstance]) -> float:
    scores = cider_scores(instances)
    return sum(scores) / len(scores) if scores else 0.0


# ---------------------------------------------------------------------------
# METEOR-lite

@lru_cache(maxsize=65536)
def stem(word: str) -> str:
    """The first lemmatization (verb, noun, adjective) that changes ``word``."""
    for cat in (AtomCategory.ACTION, AtomCategory.ENTITY, AtomCategory.ATTRIBUTE):
        lemma = lemmatize(word, cat)
        if lemma != word:
            return lemma
    return word


def align(candidate: Sequence[str], reference: Sequence[str]) -> list[tuple[int, int]]:
    """Exact-then-stem unigram alignment as sorted (candidate, reference) index pairs.

    Within a stage each candidate word takes the reference position right after
    its predecessor's match when that is possible, otherwise the leftmost free
    position, which keeps chunks long.
    """
    match: dict[int, int] = {}
    used: set[int] = set()
    for key in (lambda w: w, stem):
        ref_keys = [key(w) for w in reference]
        for i, w in enumerate(candidate):
            if i in match:
                continue
            kw = key(w)
            free = [j for j, rk in enumerate(ref_keys) if rk == kw and j not in used]
            if not free:
                continue
            prev = match.get(i - 1)
            j = prev + 1 if prev is not None and prev + 1 in free else free[0]
            match[i] = j
            used.add(j)
    return sorted(match.items())


def count_chunks(pairs: Sequence[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_sentence(candidate: Sequence[str], reference: Sequence[str]) -> float:
    pairs = align(candidate, reference)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, r = m / len(candidate), m / len(reference)
    fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r)
    penalty = METEOR_GAMMA * (count_chunks(pairs) / m) ** METEOR_BETA
    return fmean * (1.0 - penalty)


def meteor_lite_scores(instances: Sequence[EvalInstance]) -> list[float]:
    return [max(meteor_sentence(inst.candidate, ref) for ref in inst.references) for inst in instances]


def meteor_lite(instances: Sequence[EvalInstance]) -> float:
    scores = meteor_lite_scores(instances)
    return sum(scores) / len(scores) if scores else 0.0


# ---------------------------------------------------------------------------
# reports

METRIC_NAMES = ("bleu_1", "bleu_2", "bleu_3", "bleu_4", "meteor_lite", "cider")
METRIC_RANGES = {**{f"bleu_{n}": (0.0, 1.0) for n in range(1, 5)},
                 "meteor_lite": (0.0, 1.0), "cider": (0.0, 10.0)}


@dataclass
class ScoreReport:
    bleu_1: float
    bleu_2: float
    bleu_3: float
    bleu_4: float
    meteor_lite: float
    cider: float
    per_instance: list[dict] = field(default_factory=list)

    def scores(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def to_json(self) -> dict:
        return {**self.scores(), "per_instance": self.per_instance,
                "notes": {"meteor_lite": "exact + lemma stages only (M-lite)",
                          "cider": "basic TF-IDF CIDEr, no length penalty"}}


def score_corpus(instances: Sequence[EvalInstance]) -> ScoreReport:
    b = bleu(instances, 4)
    cs = cider_scores(instances)
    ms = meteor_lite_scores(instances)
    n = len(instances)
    per = [{"id": inst.id, "cider": c, "meteor_lite": m} for inst, c, m in zip(instances, cs, ms)]
    return ScoreReport(b[1], b[2], b[3], b[4],
                       sum(ms) / n if n else 0.0, sum(cs) / n if n else 0.0, per)


def load_score_file(path: str | Path) -> list[EvalInstance]:
    """Join ``{candidates: [{id, caption}], references: [{id, captions}]}`` by id."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})") from None
    cands = obj.get("candidates") if isinstance(obj, dict) else None
    refs = obj.get("references") if isinstance(obj, dict) else None
    if not cands:
        raise DataError(f"{path}: no candidates")
    if not refs:
        raise DataError(f"{path}: no references")
    ref_map = {}
    for r in refs:
        if not r.get("captions"):
            raise DataError(f"{path}: reference {r.get('id')!r} has no captions")
        ref_map[str(r["id"])] = [tokenize(c) for c in r["captions"]]
    out = []
    for c in cands:
        cid = str(c["id"])
        if cid not in ref_map:
            raise DataError(f"{path}: candidate {cid!r} has no references")
        out.append(EvalInstance.of(tokenize(c["caption"]), ref_map[cid], cid))
    return out
