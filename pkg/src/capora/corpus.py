"""Caption ingestion, tokenization, vocabularies and the synthetic toy corpus."""

from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .atomizer import Atom, AtomCategory

SPLITS = ("train", "valid", "test")

BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"
RESERVED = (BOS, EOS, UNK)


class DataError(ValueError):
    """Raised for malformed input data (bad lines, missing fields, ...)."""


@dataclass(frozen=True)
class CaptionRecord:
    id: str
    split: str
    text: str
    tokens: tuple[str, ...] = ()
    gold_tags: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"record {self.id!r}: unknown split {self.split!r}")
        if self.gold_tags is not None and self.tokens and len(self.gold_tags) != len(self.tokens):
            raise DataError(f"record {self.id!r}: {len(self.gold_tags)} tags for {len(self.tokens)} tokens")


# ---------------------------------------------------------------------------
# loading

def _parse_tags(value, where: str):
    if value is None:
        return None
    if isinstance(value, str):
        return tuple(value.split())
    if isinstance(value, list) and all(isinstance(t, str) for t in value):
        return tuple(value)
    raise DataError(f"{where}: 'tags' must be a list of strings or a space separated string")


def load_dataset(path: str | Path, format: str | None = None) -> list[CaptionRecord]:
    """Read caption records from a JSONL or TSV file, preserving file order.

    JSONL lines are objects with ``id``, ``split``, ``text`` and optional
    ``tags``; TSV lines are ``id<TAB>split<TAB>text[<TAB>tags]``.  Tokens are
    left empty; call :func:`tokenize_records` to fill them.
    """
    path = Path(path)
    if format is None:
        format = "tsv" if path.suffix.lower() in (".tsv", ".txt") else "jsonl"
    if format not in ("jsonl", "tsv"):
        raise DataError(f"unknown dataset format {format!r}")

    records: list[CaptionRecord] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            if format == "jsonl":
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{where}: invalid JSON ({exc.msg})") from None
                if not isinstance(obj, dict):
                    raise DataError(f"{where}: expected a JSON object")
                missing = [k for k in ("id", "split", "text") if k not in obj]
                if missing:
                    raise DataError(f"{where}: missing field(s) {', '.join(missing)}")
                rid, split, text = str(obj["id"]), obj["split"], obj["text"]
                tags = _parse_tags(obj.get("tags"), where)
            else:
                cols = line.split("\t")
                if len(cols) not in (3, 4):
                    raise DataError(f"{where}: expected 3 or 4 tab separated columns, got {len(cols)}")
                rid, split, text = cols[:3]
                tags = _parse_tags(cols[3], where) if len(cols) == 4 else None
            if not isinstance(text, str):
                raise DataError(f"{where}: 'text' must be a string")
            if rid in seen:
                raise DataError(f"{where}: duplicate id {rid!r}")
            seen.add(rid)
            try:
                records.append(CaptionRecord(id=rid, split=split, text=text, gold_tags=tags))
            except DataError as exc:
                raise DataError(f"{where}: {exc}") from None
    return records


def save_dataset(records: Iterable[CaptionRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            obj = {"id": r.id, "split": r.split, "text": r.text}
            if r.gold_tags is not None:
                obj["tags"] = list(r.gold_tags)
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# tokenization

def _load_clitics() -> tuple[str, ...]:
    text = resources.files("capora.data").joinpath("clitics.txt").read_text(encoding="utf-8")
    rules = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    return tuple(sorted(rules, key=len, reverse=True))


CLITICS = _load_clitics()
_CLITIC_ALT = "|".join(re.escape(c) for c in CLITICS)
_TOKEN_RE = re.compile(
    rf"(?:{_CLITIC_ALT})(?![^\W_])"      # a bare clitic, e.g. re-tokenizing "'s"
    r"|[^\W_]+(?:['\-][^\W_]+)*"         # word, possibly with internal ' or -
    r"|[^\w\s]|_"                        # any other single symbol
)


def _split_clitic(word: str) -> list[str]:
    for clitic in CLITICS:
        if len(word) > len(clitic) and word.endswith(clitic):
            return [word[: -len(clitic)], clitic]
    return [word]


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it into word, clitic and punctuation tokens.

    >>> tokenize("A man runs.")
    ['a', 'man', 'runs', '.']
    >>> tokenize("it's red")
    ['it', "'s", 'red']
    """
    tokens: list[str] = []
    for tok in _TOKEN_RE.findall(text.lower()):
        if "'" in tok and tok not in CLITICS:
            tokens.extend(_split_clitic(tok))
        else:
            tokens.append(tok)
    return tokens


def tokenize_records(records: Iterable[CaptionRecord]) -> list[CaptionRecord]:
    """Return copies of ``records`` with ``tokens`` populated."""
    out = []
    for r in records:
        toks = tuple(tokenize(r.text))
        if r.gold_tags is not None and len(r.gold_tags) != len(toks):
            raise DataError(f"record {r.id!r}: {len(r.gold_tags)} tags for {len(toks)} tokens")
        out.append(replace(r, tokens=toks))
    return out


# ---------------------------------------------------------------------------
# vocabulary

@dataclass(frozen=True)
class Vocabulary:
    word_of: tuple[str, ...]
    id_of: dict[str, int] = field(compare=False, repr=False)

    @classmethod
    def from_words(cls, words: Sequence[str]) -> "Vocabulary":
        words = tuple(RESERVED) + tuple(w for w in words if w not in RESERVED)
        return cls(word_of=words, id_of={w: i for i, w in enumerate(words)})

    @property
    def bos(self) -> int:
        return self.id_of[BOS]

    @property
    def eos(self) -> int:
        return self.id_of[EOS]

    @property
    def unk(self) -> int:
        return self.id_of[UNK]

    def __len__(self) -> int:
        return len(self.word_of)

    def __contains__(self, word: str) -> bool:
        return word in self.id_of

    def index(self, word: str) -> int:
        return self.id_of.get(word, self.id_of[UNK])

    def encode(self, tokens: Sequence[str]) -> list[int]:
        """Token ids wrapped in <bos> ... <eos>."""
        return [self.bos] + [self.index(t) for t in tokens] + [self.eos]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.word_of[i] for i in ids]


def build_vocab(records: Iterable[CaptionRecord], cap: int) -> Vocabulary:
    """Keep the ``cap`` most frequent training words (ties lexicographic)."""
    if cap < 1:
        raise ValueError(f"vocabulary cap must be >= 1, got {cap}")
    counts: Counter[str] = Counter()
    for r in records:
        if r.split == "train":
            counts.update(t for t in r.tokens if t not in RESERVED)
    ranked = sorted(counts, key=lambda w: (-counts[w], w))[:cap]
    return Vocabulary.from_words(ranked)


# ---------------------------------------------------------------------------
# toy corpus

_SLOT_RE = re.compile(r"^<([A-Z]+)(?::([a-z0-9]+))?>$")

DEFAULT_SLOT_CATEGORIES = {
    "ENT": "Entity",
    "PLACE": "Entity",
    "ACT": "Action",
    "ATT": "Attribute",
}
# (category, form) -> gold tag of the instantiated word
_FORM_TAGS = {
    ("Entity", None): "NN",
    ("Entity", "pl"): "NNS",
    ("Action", None): "VB",
    ("Action", "prog"): "VBG",
    ("Action", "3sg"): "VBZ",
    ("Action", "past"): "VBD",
    ("Attribute", None): "JJ",
}


@dataclass
class ToyCorpusSpec:
    """Configuration of the template generator.

    Templates are whitespace separated; fixed words carry their gold tag as
    ``word/TAG`` and slots are written ``<SLOT>`` or ``<SLOT:form>``.
    Lexicon entries are lemmas, optionally followed by explicit inflections
    as ``lemma|form=word|...``.
    """

    n_captions: int
    templates: list[str]
    lexicon: dict[str, list[str]]
    seed: int = 0
    slot_categories: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_SLOT_CATEGORIES))
    zipf: float = 1.0
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    @classmethod
    def from_json(cls, path_or_obj) -> "ToyCorpusSpec":
        if isinstance(path_or_obj, (str, Path)):
            obj = json.loads(Path(path_or_obj).read_text(encoding="utf-8"))
        else:
            obj = dict(path_or_obj)
        if "split_fractions" in obj:
            obj["split_fractions"] = tuple(obj["split_fractions"])
        if "slot_categories" in obj:
            obj["slot_categories"] = {**DEFAULT_SLOT_CATEGORIES, **obj["slot_categories"]}
        return cls(**obj)

    def to_json(self) -> dict:
        return {
            "n_captions": self.n_captions,
            "templates": list(self.templates),
            "lexicon": {k: list(v) for k, v in self.lexicon.items()},
            "seed": self.seed,
            "slot_categories": dict(self.slot_categories),
            "zipf": self.zipf,
            "split_fractions": list(self.split_fractions),
        }


def default_toy_spec() -> ToyCorpusSpec:
    """The committed acceptance corpus configuration."""
    return ToyCorpusSpec.from_json(json.loads(
        resources.files("capora.data").joinpath("toy_corpus.json").read_text(encoding="utf-8")))


def inflect(lemma: str, form: str | None) -> str:
    """Regular English inflection for the generator's slot forms."""
    if form is None:
        return lemma
    vowels = "aeiou"
    if form == "pl" or form == "3sg":
        if lemma.endswith(("s", "x", "z", "ch", "sh")):
            return lemma + "es"
        if lemma.endswith("y") and len(lemma) > 1 and lemma[-2] not in vowels:
            return lemma[:-1] + "ies"
        return lemma + "s"
    if form in ("prog", "past"):
        suffix = "ing" if form == "prog" else "ed"
        if form == "prog" and lemma.endswith("ie"):
            return lemma[:-2] + "ying"
        if lemma.endswith("e") and not lemma.endswith("ee"):
            return lemma[:-1] + suffix
        if re.fullmatch(r"[^aeiou]*[aeiou][^aeiouwxy]", lemma):
            return lemma + lemma[-1] + suffix
        return lemma + suffix
    raise ValueError(f"unknown inflection form {form!r}")


def _parse_entry(entry: str) -> tuple[str, dict[str, str]]:
    lemma, *forms = entry.split("|")
    explicit = {}
    for f in forms:
        name, _, word = f.partition("=")
        explicit[name] = word
    return lemma, explicit


@dataclass(frozen=True)
class _Piece:
    word: str | None
    tag: str | None
    slot: str | None = None
    form: str | None = None


def _parse_template(template: str, spec: ToyCorpusSpec) -> list[_Piece]:
    pieces = []
    for raw in template.split():
        m = _SLOT_RE.match(raw)
        if m:
            slot, form = m.group(1), m.group(2)
            if slot not in spec.slot_categories:
                raise DataError(f"template {template!r}: unknown slot {slot!r}")
            if not spec.lexicon.get(slot):
                raise DataError(f"template {template!r}: lexicon for slot {slot!r} is empty")
            cat = spec.slot_categories[slot]
            if (cat, form) not in _FORM_TAGS:
                raise DataError(f"template {template!r}: form {form!r} not valid for {cat}")
            pieces.append(_Piece(None, _FORM_TAGS[(cat, form)], slot, form))
        else:
            word, sep, tag = raw.rpartition("/")
            if not sep or not word:
                raise DataError(f"template {template!r}: fixed word {raw!r} needs a /TAG")
            pieces.append(_Piece(word, tag))
    return pieces


@dataclass
class ToyCorpus:
    records: list[CaptionRecord]
    atoms: dict[str, frozenset[Atom]]

    def __iter__(self):
        return iter((self.records, self.atoms))


def generate_toy_corpus(spec: ToyCorpusSpec) -> ToyCorpus:
    """Instantiate templates with lexicon words; returns records and true atoms.

    Slot words are drawn with Zipf-like weights ``1 / (rank + 1) ** zipf`` so
    that atom frequencies fall off with lexicon position.  Records carry gold
    tags taken from the templates.
    """
    if not spec.templates:
        raise DataError("toy corpus spec has no templates")
    if not spec.lexicon:
        raise DataError("toy corpus spec has an empty lexicon")
    parsed = [_parse_template(t, spec) for t in spec.templates]
    entries = {slot: [_parse_entry(e) for e in words] for slot, words in spec.lexicon.items()}
    weights = {slot: [1.0 / (i + 1) ** spec.zipf for i in range(len(ws))] for slot, ws in entries.items()}

    rng = random.Random(spec.seed)
    n = spec.n_captions
    n_train = int(round(spec.split_fractions[0] * n))
    n_valid = int(round(spec.split_fractions[1] * n))
    width = len(str(max(n - 1, 0)))

    records, atoms = [], {}
    for i in range(n):
        pieces = parsed[rng.randrange(len(parsed))]
        words, tags, true_atoms = [], [], set()
        for p in pieces:
            if p.slot is None:
                words.append(p.word)
            else:
                (lemma, explicit), = rng.choices(entries[p.slot], weights=weights[p.slot])
                words.append(explicit.get(p.form, inflect(lemma, p.form)) if p.form else lemma)
                true_atoms.add(Atom(lemma, AtomCategory(spec.slot_categories[p.slot])))
            tags.append(p.tag)
        split = "train" if i < n_train else "valid" if i < n_train + n_valid else "test"
        rid = f"toy{i:0{width}d}"
        text = " ".join(words)
        text = re.sub(r" ([.,!?])", r"\1", text)
        if tokenize(text) != words:
            raise DataError(f"template instance {text!r} does not round-trip through tokenize")
        records.append(CaptionRecord(id=rid, split=split, text=text,
                                     tokens=tuple(words), gold_tags=tuple(tags)))
        atoms[rid] = frozenset(true_atoms)
    return ToyCorpus(records, atoms)
