"""Oracle experiments: caption quality as a function of atom count k and corruption rate r."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .atomizer import (
    CATEGORIES,
    Atom,
    AtomBag,
    AtomCategory,
    FrequencyTable,
    NoiseSpec,
    build_frequency_table,
    caption_bag,
    corrupt_bag,
    extract_atoms,
    noise_pool,
    select_top_k,
)
from .checkpoint import save_checkpoint
from .corpus import CaptionRecord, DataError, Vocabulary, build_vocab, tokenize_records
from .lm import DecodeConfig, DivergenceError, ModelConfig, ModelParams, generate_caption
from .metrics import METRIC_NAMES, METRIC_RANGES, EvalInstance, score_corpus
from .tagger import TaggerModel, fixture_model, tag_tokens
from .trainer import SearchSpace, TrainConfig, random_search, train_model
from .util import derive_seed

COMBINED = "Combined"
SWEEP_CATEGORIES = (*(c.value for c in CATEGORIES), COMBINED)
BEYOND = "beyond oracle range"
NOTES = {
    "corruption": "noise replaces atoms in train, valid and test bags alike",
    "meteor_lite": "M-lite: exact + lemma alignment only, not comparable to full METEOR",
    "cider": "basic TF-IDF CIDEr without length penalty",
}


# ---------------------------------------------------------------------------
# data preparation

@dataclass(frozen=True)
class OracleItem:
    id: str
    split: str
    tokens: tuple[str, ...]
    atoms: frozenset[Atom]


@dataclass
class OracleDataset:
    """Captions with their extracted atoms; frequencies and vocabulary come from train only."""

    items: list[OracleItem]
    table: FrequencyTable
    vocab: Vocabulary
    atom_list: tuple[Atom, ...]

    def split(self, name: str) -> list[OracleItem]:
        return [it for it in self.items if it.split == name]

    @property
    def atom_index(self) -> dict[Atom, int]:
        return {a: i for i, a in enumerate(self.atom_list)}

    def max_k(self, category: str) -> int:
        cats = CATEGORIES if category == COMBINED else (AtomCategory(category),)
        return max(len(self.table.ranked[c]) for c in cats)


def prepare_dataset(records: Sequence[CaptionRecord], tagger: TaggerModel | None = None,
                    gold_tags: bool = False, vocab_cap: int = 20000) -> OracleDataset:
    """Tokenize, tag and atomize ``records``.

    Tags come from the records themselves when ``gold_tags`` is set, otherwise
    from ``tagger`` (default: the bundled fixture tagger).
    """
    records = tokenize_records(records)
    for split in ("train", "valid", "test"):
        if not any(r.split == split for r in records):
            raise DataError(f"dataset has no {split!r} records")
    if not gold_tags and tagger is None:
        tagger = fixture_model()
    items = []
    for r in records:
        if gold_tags:
            if r.gold_tags is None:
                raise DataError(f"record {r.id!r} has no gold tags")
            tags = r.gold_tags
        else:
            tags = tag_tokens(tagger, r.tokens)
        items.append(OracleItem(r.id, r.split, tuple(r.tokens), extract_atoms(r.tokens, tags)))
    table = build_frequency_table(it.atoms for it in items if it.split == "train")
    vocab = build_vocab(records, vocab_cap)
    return OracleDataset(items, table, vocab, table.all_atoms())


# ---------------------------------------------------------------------------
# configuration and results

@dataclass(frozen=True)
class SweepConfig:
    ks: tuple = (0, 2, 5, 10, 20, 30)
    categories: tuple[str, ...] = (COMBINED,)
    rs: tuple[float, ...] = (0.0,)
    train: TrainConfig = TrainConfig()
    word_embed_dim: int = 128
    atom_embed_dim: int = 128
    hidden_dim: int = 256
    dropout: bool = False
    metrics: tuple[str, ...] = METRIC_NAMES
    beam_width: int = 5
    max_len: int = 30
    seed: int = 0
    search_trials: int = 0          # >0: random search per cell instead of the fixed config

    def __post_init__(self):
        ints = [k for k in self.ks if k != "all"]
        if any(not isinstance(k, int) or k < 0 for k in ints):
            raise ValueError(f"ks must be non-negative integers or 'all', got {self.ks}")
        if ints != sorted(ints) or ("all" in self.ks and self.ks[-1] != "all"):
            raise ValueError(f"ks must be sorted ascending with 'all' last, got {self.ks}")
        if any(not 0.0 <= r <= 1.0 for r in self.rs):
            raise ValueError(f"rs must lie in [0, 1], got {self.rs}")
        if list(self.rs) != sorted(self.rs):
            raise ValueError(f"rs must be sorted ascending, got {self.rs}")
        bad = [c for c in self.categories if c not in SWEEP_CATEGORIES]
        if bad:
            raise ValueError(f"unknown categories {bad}; choose from {SWEEP_CATEGORIES}")
        bad = [m for m in self.metrics if m not in METRIC_NAMES]
        if bad:
            raise ValueError(f"unknown metrics {bad}; choose from {METRIC_NAMES}")

    def model_config(self, vocab_size: int, atom_vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size, atom_vocab_size, self.word_embed_dim, self.atom_embed_dim,
                           self.hidden_dim, self.dropout)

    @property
    def decode(self) -> DecodeConfig:
        return DecodeConfig(self.beam_width, self.max_len)

    def to_json(self) -> dict:
        obj = asdict(self)
        obj.update(ks=list(self.ks), categories=list(self.categories), rs=list(self.rs),
                   metrics=list(self.metrics), train=self.train.to_json())
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "SweepConfig":
        obj = dict(obj)
        train = TrainConfig.from_json(obj.pop("train", {}))
        for key in ("ks", "categories", "rs", "metrics"):
            if key in obj:
                obj[key] = tuple(obj[key])
        if "rs" in obj:
            obj["rs"] = tuple(float(r) for r in obj["rs"])
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown sweep config keys: {sorted(unknown)}")
        return cls(train=train, **obj)


@dataclass(frozen=True)
class CurvePoint:
    k: int
    category: str
    r: float
    metric: str
    score: float | None
    checkpoint_id: str
    seconds: float = field(default=0.0, compare=False)
    status: str = "ok"

    def __post_init__(self):
        if self.score is not None:
            lo, hi = METRIC_RANGES[self.metric]
            if not lo <= self.score <= hi:
                raise ValueError(f"{self.metric} score {self.score} outside [{lo}, {hi}]")

    def sort_key(self):
        return (SWEEP_CATEGORIES.index(self.category), self.k, self.r, METRIC_NAMES.index(self.metric))


@dataclass
class CellResult:
    category: str
    k: int
    r: float
    scores: dict[str, float] | None
    checkpoint_id: str
    seconds: float
    log_summary: dict
    predictions: list[tuple[str, list[str]]]
    error: str | None = None

    def points(self, metrics: Sequence[str]) -> list[CurvePoint]:
        if self.scores is None:
            return [CurvePoint(self.k, self.category, self.r, m, None, "", self.seconds, "failed")
                    for m in metrics]
        return [CurvePoint(self.k, self.category, self.r, m, self.scores[m], self.checkpoint_id,
                           self.seconds) for m in metrics]


def cell_name(category: str, k: int, r: float) -> str:
    return f"{category}-k{k}-r{r:g}"


def params_digest(params: ModelParams) -> str:
    h = hashlib.sha1()
    for name in params.names():
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    return h.hexdigest()[:12]


# ---------------------------------------------------------------------------
# cells

def cell_bags(dataset: OracleDataset, category: str, k: int, r: float, seed: int) -> dict[str, AtomBag]:
    """Bags for every item; at r > 0 each bag is corrupted with a seed derived from its id."""
    topk = select_top_k(dataset.table, k, None if category == COMBINED else AtomCategory(category))
    bags = {it.id: caption_bag(it.atoms, topk) for it in dataset.items}
    if r > 0:
        pool = noise_pool(dataset.table, topk)
        bags = {i: corrupt_bag(b, NoiseSpec(r, derive_seed(seed, "noise", category, k, r, i), pool))
                for i, b in bags.items()}
    return bags


def _examples(dataset: OracleDataset, split: str, bags: dict[str, AtomBag]):
    idx = dataset.atom_index
    return [(dataset.vocab.encode(it.tokens), sorted(idx[a] for a in bags[it.id]))
            for it in dataset.split(split)]


def decode_split(params: ModelParams, dataset: OracleDataset, split: str, bags: dict[str, AtomBag],
                 decode: DecodeConfig) -> list[tuple[str, list[str]]]:
    idx = dataset.atom_index
    cache: dict[tuple[int, ...], list[str]] = {}
    out = []
    for it in dataset.split(split):
        key = tuple(sorted(idx[a] for a in bags[it.id]))
        if key not in cache:
            cache[key] = dataset.vocab.decode(generate_caption(params, key, decode))
        out.append((it.id, cache[key]))
    return out


def run_cell(dataset: OracleDataset, config: SweepConfig, category: str, k: int, r: float,
             out_dir: str | Path | None = None) -> CellResult:
    """Train, decode and score one (category, k, r) cell.

    The training seed depends on (category, k) only, so the r=0 cell is
    bit-identical to the clean cell of a k sweep.
    """
    start = time.perf_counter()
    bags = cell_bags(dataset, category, k, r, config.seed)
    train, valid = _examples(dataset, "train", bags), _examples(dataset, "valid", bags)
    model_cfg = config.model_config(len(dataset.vocab), len(dataset.atom_list))
    train_cfg = replace(config.train, seed=derive_seed(config.seed, "cell", category, k))
    try:
        if config.search_trials > 0:
            found = random_search(SearchSpace(), config.search_trials, train, valid, model_cfg,
                                  train_cfg, seed=train_cfg.seed)
            params, log = found.best.params, found.best.log
        else:
            result = train_model(train, valid, model_cfg, train_cfg)
            params, log = result.params, result.log
        preds = decode_split(params, dataset, "test", bags, config.decode)
    except DivergenceError as exc:
        summary = exc.log.summary() if exc.log is not None else {}
        return CellResult(category, k, r, None, "", time.perf_counter() - start, summary, [], str(exc))

    refs = {it.id: it.tokens for it in dataset.split("test")}
    report = score_corpus([EvalInstance.of(p, [refs[i]], i) for i, p in preds])
    scores = {m: getattr(report, m) for m in config.metrics}
    ckpt_id = params_digest(params)
    if out_dir is not None:
        cells = Path(out_dir) / "cells"
        cells.mkdir(parents=True, exist_ok=True)
        name = cell_name(category, k, r)
        save_checkpoint(cells / f"{name}.ckpt", params,
                        {"vocab": list(dataset.vocab.word_of),
                         "atoms": [str(a) for a in dataset.atom_list],
                         "cell": {"category": category, "k": k, "r": r}})
        log.write_jsonl(cells / f"{name}.log.jsonl")
        _dump(cells / f"{name}.predictions.json",
              {"candidates": [{"id": i, "caption": " ".join(p)} for i, p in preds],
               "references": [{"id": i, "captions": [" ".join(refs[i])]} for i, _ in preds]})
    return CellResult(category, k, r, scores, ckpt_id, time.perf_counter() - start, log.summary(), preds)


def _run_cell_job(args) -> CellResult:
    return run_cell(*args)


def resolve_ks(dataset: OracleDataset, category: str, ks: Iterable) -> list[int]:
    out = []
    for k in ks:
        k = dataset.max_k(category) if k == "all" else int(k)
        if k not in out:
            out.append(k)
    return sorted(out)


def run_cells(dataset: OracleDataset, config: SweepConfig, cells: list[tuple[str, int, float]],
              out_dir=None, jobs: int = 1) -> list[CellResult]:
    work = [(dataset, config, c, k, r, out_dir) for c, k, r in cells]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_job, work))
    else:
        results = [_run_cell_job(w) for w in work]
    return sorted(results, key=lambda c: (SWEEP_CATEGORIES.index(c.category), c.k, c.r))


def sweep_k(dataset: OracleDataset, config: SweepConfig, out_dir=None, jobs: int = 1) -> list[CurvePoint]:
    """Clean-bag oracle score for every (category, k)."""
    cells = [(c, k, 0.0) for c in config.categories for k in resolve_ks(dataset, c, config.ks)]
    results = run_cells(dataset, config, cells, out_dir, jobs)
    return sorted((p for res in results for p in res.points(config.metrics)), key=CurvePoint.sort_key)


def sweep_noise(dataset: OracleDataset, config: SweepConfig, out_dir=None, jobs: int = 1) -> list[CurvePoint]:
    """Oracle score for every (category, k, r) with corrupted bags."""
    if not config.rs:
        raise ValueError("noise sweep needs at least one corruption rate")
    cells = [(c, k, float(r)) for c in config.categories
             for k in resolve_ks(dataset, c, config.ks) for r in config.rs]
    results = run_cells(dataset, config, cells, out_dir, jobs)
    return sorted((p for res in results for p in res.points(config.metrics)), key=CurvePoint.sort_key)


# ---------------------------------------------------------------------------
# equivalence and reports

# reference-table column -> metric computed here
TABLE_METRICS = {"B1": "bleu_1", "B4": "bleu_4", "M": "meteor_lite", "C": "cider"}


def _as_float(text: str) -> float | None:
    try:
        return float(text)
    except ValueError:
        return None


@dataclass(frozen=True)
class EquivalenceTable:
    constants: dict

    @classmethod
    def load(cls, path: str | Path | None = None) -> "EquivalenceTable":
        if path is None:
            text = resources.files("capora.data").joinpath("reference_values.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls(json.loads(text))

    def rows(self) -> list[dict]:
        return self.constants["system_vs_oracle"]

    def system_score(self, dataset: str, column: str) -> float | None:
        for row in self.rows():
            if row["dataset"] == dataset:
                return _as_float(row["system"][column])
        raise KeyError(dataset)

    def render(self) -> str:
        """Plain-text rendering of the committed constants, values verbatim."""
        mcols, acols = self.constants["metric_columns"], self.constants["atom_columns"]
        lines = ["Published system vs oracle (displayed constants, not measurements; M is full METEOR)"]
        header = ["dataset".ljust(13)] + [c.ljust(15) for c in mcols] + [c.ljust(7) for c in acols]
        lines.append(" ".join(header).rstrip())
        for row in self.rows():
            cells = [row["dataset"].ljust(13)]
            cells += [f"{row['system'][c]} vs {row['oracle'][c]}".ljust(15) for c in mcols]
            cells += [row["equivalent_atoms"][c].ljust(7) for c in acols]
            lines.append(" ".join(cells).rstrip())
        lines.append("")
        lines.append("Atoms judged visual by human raters (%)")
        lines.append("dataset       Entity Action Attribute")
        for row in self.constants["visuality_percent"]:
            lines.append(f"{row['dataset']:<13} {row['Entity']:<6} {row['Action']:<6} {row['Attribute']}")
        lines.append("")
        lines.append("Extracted atom counts")
        lines.append("dataset       Entity Action Attribute")
        for row in self.constants["atom_counts"]:
            lines.append(f"{row['dataset']:<13} {row['Entity']:<6} {row['Action']:<6} {row['Attribute']}")
        return "\n".join(lines) + "\n"


def curve(points: Iterable[CurvePoint], metric: str, category: str, r: float = 0.0) -> list[tuple[int, float]]:
    return sorted((p.k, p.score) for p in points
                  if p.metric == metric and p.category == category and p.r == r and p.score is not None)


def equivalent_k(curve_points: Sequence[tuple[int, float]], score: float) -> float | str:
    """Smallest k at which the piecewise-linear curve reaches ``score``."""
    if not curve_points:
        raise ValueError("empty curve")
    pts = sorted(curve_points)
    if pts[0][1] >= score:
        return float(pts[0][0])
    for (k0, s0), (k1, s1) in zip(pts, pts[1:]):
        if s0 < score <= s1:
            return k0 + (score - s0) * (k1 - k0) / (s1 - s0)
    return BEYOND


def equivalence_report(points: Sequence[CurvePoint], table: EquivalenceTable) -> dict:
    """Map every published system score onto each measured curve of the matching metric."""
    categories = sorted({p.category for p in points}, key=SWEEP_CATEGORIES.index)
    lookups = []
    for row in table.rows():
        for column, metric in TABLE_METRICS.items():
            system = _as_float(row["system"][column])
            entry = {"dataset": row["dataset"], "column": column, "metric": metric,
                     "system": row["system"][column], "oracle": row["oracle"][column],
                     "equivalent_k": {}}
            for cat in categories:
                pts = curve(points, metric, cat)
                if system is not None and pts:
                    entry["equivalent_k"][cat] = equivalent_k(pts, system)
            lookups.append(entry)
    return {"notes": NOTES, "reference": table.constants, "lookups": lookups}


CSV_FIELDS = ("category", "k", "r", "metric", "score", "checkpoint_id", "status")


def points_csv(points: Iterable[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for p in sorted(points, key=CurvePoint.sort_key):
        w.writerow([p.category, p.k, repr(p.r), p.metric,
                    "" if p.score is None else repr(p.score), p.checkpoint_id, p.status])
    return buf.getvalue()


def read_points_csv(path: str | Path) -> list[CurvePoint]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(CSV_FIELDS) - set(rows[0]):
        raise DataError(f"{path}: missing columns {sorted(set(CSV_FIELDS) - set(rows[0]))}")
    return [CurvePoint(int(r["k"]), r["category"], float(r["r"]), r["metric"],
                       float(r["score"]) if r["score"] else None, r["checkpoint_id"],
                       status=r["status"]) for r in rows]


def emit_report(points: Sequence[CurvePoint], table: EquivalenceTable, out_dir: str | Path,
                manifest: dict | None = None, formats: Sequence[str] = ("csv",)) -> dict[str, Path]:
    """Write points (CSV and/or JSON), manifest.json, equivalence.json and timings.json.

    Wall-clock times live only in timings.json so that the other files are
    byte-identical across reruns.
    """
    if not points:
        raise ValueError("no curve points to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = sorted(points, key=CurvePoint.sort_key)
    paths = {}
    if "csv" in formats:
        paths["points"] = out / "points.csv"
        paths["points"].write_text(points_csv(ordered), encoding="utf-8")
    if "json" in formats:
        paths["points_json"] = out / "points.json"
        _dump(paths["points_json"], [{k: v for k, v in asdict(p).items() if k != "seconds"} for p in ordered])
    paths["equivalence"] = out / "equivalence.json"
    _dump(paths["equivalence"], equivalence_report(ordered, table))
    paths["manifest"] = out / "manifest.json"
    _dump(paths["manifest"], {"notes": NOTES, "n_points": len(ordered),
                              "failed_cells": sorted({cell_name(p.category, p.k, p.r)
                                                      for p in ordered if p.status != "ok"}),
                              **(manifest or {})})
    paths["timings"] = out / "timings.json"
    timings = {}
    for p in ordered:
        timings[cell_name(p.category, p.k, p.r)] = p.seconds
    _dump(paths["timings"], timings)
    return paths


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties."""
    def ranks(v):
        v = np.asarray(v, dtype=float)
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        r[order] = np.arange(len(v), dtype=float)
        for val in np.unique(v):
            tie = v == val
            r[tie] = r[tie].mean()
        return r
    rx, ry = ranks(x), ranks(y)
    rx, ry = rx - rx.mean(), ry - ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    return float(rx @ ry) / denom if denom else 0.0
