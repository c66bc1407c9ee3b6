"""Visual atoms: tag heuristics, lemmatization, frequency ranking, bags and noise."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np


class AtomCategory(str, Enum):
    ENTITY = "Entity"
    ACTION = "Action"
    ATTRIBUTE = "Attribute"

    def __str__(self) -> str:
        return self.value


CATEGORIES = (AtomCategory.ENTITY, AtomCategory.ACTION, AtomCategory.ATTRIBUTE)

ENTITY_TAGS = frozenset({"NN", "NNP", "NNPS", "NNS", "PRP"})
ACTION_TAGS = frozenset({"VB", "VBD", "VBG", "VBN", "VBP", "VBZ"})
ATTRIBUTE_TAGS = frozenset({"JJ", "JJR", "JJS"})


class Atom(NamedTuple):
    lemma: str
    category: AtomCategory

    def __str__(self) -> str:
        return f"{self.lemma}/{self.category.value}"

    @classmethod
    def parse(cls, text: str) -> "Atom":
        lemma, _, cat = text.rpartition("/")
        return cls(lemma, AtomCategory(cat))


def categorize_tag(tag: str) -> AtomCategory | None:
    if tag in ENTITY_TAGS:
        return AtomCategory.ENTITY
    if tag in ACTION_TAGS:
        return AtomCategory.ACTION
    if tag in ATTRIBUTE_TAGS:
        return AtomCategory.ATTRIBUTE
    return None


# ---------------------------------------------------------------------------
# lemmatizer

def _load_exceptions() -> dict[tuple[str, str], str]:
    text = resources.files("capora.data").joinpath("lemma_exceptions.tsv").read_text(encoding="utf-8")
    table = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        cat, word, lemma = line.split("\t")
        table[(cat, word)] = lemma
    return table


LEMMA_EXCEPTIONS = _load_exceptions()

_VOWEL = re.compile(r"[aeiouy]")
# monosyllabic consonant-vowel-consonant stems lost a silent e: rid(ing) -> ride
_CVC = re.compile(r"[^aeiou]*[aeiou][^aeiouwxy]")
# clusters that do not end English words but do end stems: danc(ing), larg(er)
_E_CLUSTERS = ("c", "v", "dg", "rg", "lg", "rs", "ls", "ns", "ps")
_UNDOUBLE = set("bdgmnprt")


def _restore_stem(stem: str, allow_y: bool) -> str:
    if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] in _UNDOUBLE:
        return stem[:-1]
    if allow_y and stem.endswith("i"):
        return stem[:-1] + "y"
    if stem.endswith(_E_CLUSTERS) or _CVC.fullmatch(stem):
        return stem + "e"
    return stem


def _strip_suffix(word: str, suffix: str, allow_y: bool) -> str | None:
    if not word.endswith(suffix):
        return None
    stem = word[: -len(suffix)]
    if len(stem) < 2 or not _VOWEL.search(stem):
        return None
    return _restore_stem(stem, allow_y)


def _plural(word: str) -> str:
    if len(word) <= 3 or word.endswith(("ss", "us", "is")):
        return word
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith(("sses", "xes", "ches", "shes", "zzes", "oes")):
        return word[:-2]
    if word.endswith("s"):
        return word[:-1]
    return word


def lemmatize(word: str, category: AtomCategory) -> str:
    """Reduce an inflected ``word`` to its dictionary form for ``category``.

    >>> lemmatize("cats", AtomCategory.ENTITY)
    'cat'
    >>> lemmatize("running", AtomCategory.ACTION)
    'run'
    """
    category = AtomCategory(category)
    hit = LEMMA_EXCEPTIONS.get((category.value, word)) or LEMMA_EXCEPTIONS.get(("*", word))
    if hit is not None:
        return hit
    if category is AtomCategory.ENTITY:
        return _plural(word)
    if category is AtomCategory.ACTION:
        if word.endswith("ied") and len(word) > 4:
            return word[:-3] + "y"
        for suffix, allow_y in (("ing", False), ("ed", True)):
            out = _strip_suffix(word, suffix, allow_y)
            if out is not None:
                return out
        return _plural(word)
    for suffix in ("est", "er"):
        out = _strip_suffix(word, suffix, True)
        if out is not None:
            return out
    return word


def extract_atoms(tokens: Sequence[str], tags: Sequence[str]) -> frozenset[Atom]:
    if len(tokens) != len(tags):
        raise ValueError(f"{len(tokens)} tokens but {len(tags)} tags")
    atoms = set()
    for tok, tag in zip(tokens, tags):
        cat = categorize_tag(tag)
        if cat is None:
            continue
        lemma = lemmatize(tok.lower(), cat)
        if lemma:
            atoms.add(Atom(lemma, cat))
    return frozenset(atoms)


# ---------------------------------------------------------------------------
# frequency ranking

def _rank_key(item: tuple[Atom, int]):
    atom, count = item
    return (-count, atom.lemma)


@dataclass(frozen=True)
class FrequencyTable:
    """Caption-level atom counts with per-category rankings."""

    counts: dict[Atom, int]
    ranked: dict[AtomCategory, tuple[Atom, ...]] = field(compare=False)

    @classmethod
    def from_counts(cls, counts: dict[Atom, int]) -> "FrequencyTable":
        ranked = {}
        for cat in CATEGORIES:
            items = [(a, c) for a, c in counts.items() if a.category is cat]
            ranked[cat] = tuple(a for a, _ in sorted(items, key=_rank_key))
        return cls(counts=dict(counts), ranked=ranked)

    def all_atoms(self) -> tuple[Atom, ...]:
        """Every atom, categories in fixed order, each in rank order."""
        return tuple(a for cat in CATEGORIES for a in self.ranked[cat])

    def to_tsv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write("rank\tatom\tcategory\tcount\n")
            for cat in CATEGORIES:
                for rank, atom in enumerate(self.ranked[cat], start=1):
                    fh.write(f"{rank}\t{atom.lemma}\t{cat.value}\t{self.counts[atom]}\n")

    @classmethod
    def from_tsv(cls, path: str | Path) -> "FrequencyTable":
        counts = {}
        with Path(path).open(encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                _, lemma, cat, count = line.rstrip("\n").split("\t")
                counts[Atom(lemma, AtomCategory(cat))] = int(count)
        return cls.from_counts(counts)


def build_frequency_table(atom_sets: Iterable[Iterable[Atom]]) -> FrequencyTable:
    """Count, for each atom, the number of captions that contain it."""
    counts: Counter[Atom] = Counter()
    for atoms in atom_sets:
        counts.update(set(atoms))
    return FrequencyTable.from_counts(counts)


@dataclass(frozen=True)
class TopK:
    """An ordered top-k atom list; ``category=None`` means k from each category."""

    atoms: tuple[Atom, ...]
    k: int
    category: AtomCategory | None = None
    truncated: bool = False

    def __iter__(self) -> Iterator[Atom]:
        return iter(self.atoms)

    def __len__(self) -> int:
        return len(self.atoms)

    def __contains__(self, atom) -> bool:
        return atom in self._members

    @property
    def _members(self) -> frozenset[Atom]:
        return frozenset(self.atoms)

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "category": None if self.category is None else self.category.value,
            "truncated": self.truncated,
            "atoms": [str(a) for a in self.atoms],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TopK":
        cat = obj.get("category")
        return cls(atoms=tuple(Atom.parse(a) for a in obj["atoms"]), k=obj["k"],
                   category=None if cat is None else AtomCategory(cat),
                   truncated=obj.get("truncated", False))


def select_top_k(table: FrequencyTable, k: int, category: AtomCategory | None = None) -> TopK:
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    cats = CATEGORIES if category is None else (AtomCategory(category),)
    atoms, truncated = [], False
    for cat in cats:
        ranked = table.ranked[cat]
        truncated |= k > len(ranked)
        atoms.extend(ranked[:k])
    return TopK(tuple(atoms), k, None if category is None else AtomCategory(category), truncated)


# ---------------------------------------------------------------------------
# bags

@dataclass(frozen=True)
class AtomBag:
    atoms: frozenset[Atom]
    k_source: TopK | None = None
    corrupted: bool = False

    def __iter__(self) -> Iterator[Atom]:
        return iter(sorted(self.atoms))

    def __len__(self) -> int:
        return len(self.atoms)

    def __contains__(self, atom) -> bool:
        return atom in self.atoms


def caption_bag(caption_atoms: Iterable[Atom], topk: TopK) -> AtomBag:
    """The caption's atoms restricted to the global top-k list."""
    members = topk._members
    return AtomBag(frozenset(a for a in caption_atoms if a in members), topk)


@dataclass(frozen=True)
class NoiseSpec:
    r: float
    seed: int
    pool: dict[AtomCategory, tuple[Atom, ...]]

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"corruption rate must lie in [0, 1], got {self.r}")

    def to_json(self) -> dict:
        return {"r": self.r, "seed": self.seed,
                "pool": {c.value: [a.lemma for a in atoms] for c, atoms in self.pool.items()}}


def noise_pool(table: FrequencyTable, topk: TopK) -> dict[AtomCategory, tuple[Atom, ...]]:
    """Per-category atoms of ``table`` that are not in ``topk``, in rank order."""
    members = topk._members
    return {cat: tuple(a for a in table.ranked[cat] if a not in members) for cat in CATEGORIES}


def replacement_count(r: float, size: int) -> int:
    """``round(r * size)`` with halves rounded up."""
    return int((Decimal(repr(float(r))) * size).to_integral_value(rounding=ROUND_HALF_UP))


def corrupt_bag(bag: AtomBag, spec: NoiseSpec) -> AtomBag:
    """Replace a fraction ``spec.r`` of the bag by same-category pool atoms."""
    n = replacement_count(spec.r, len(bag))
    if n == 0:
        return bag
    rng = np.random.default_rng(spec.seed)
    members = sorted(bag.atoms)
    drop = sorted(rng.choice(len(members), size=n, replace=False).tolist())
    dropped = [members[i] for i in drop]
    need = Counter(a.category for a in dropped)
    added = []
    for cat in CATEGORIES:
        if not need[cat]:
            continue
        candidates = [a for a in spec.pool.get(cat, ()) if a not in bag.atoms]
        if len(candidates) < need[cat]:
            raise ValueError(
                f"noise pool for {cat.value} has {len(candidates)} atoms, need {need[cat]}")
        picks = rng.choice(len(candidates), size=need[cat], replace=False)
        added.extend(candidates[i] for i in sorted(picks.tolist()))
    kept = bag.atoms.difference(dropped)
    return AtomBag(kept | frozenset(added), bag.k_source, corrupted=True)
