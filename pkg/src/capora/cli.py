"""Command-line entry point: ``capora <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence,
4 failed gradient check.  Settings resolve as command-line flags, then the
``--config`` file, then built-in defaults; ``CAPORA_SEED`` replaces the
seed from a config file (an explicit ``--seed`` still wins).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .atomizer import AtomCategory, build_frequency_table, extract_atoms, select_top_k
from .checkpoint import ContainerError, load_checkpoint, save_checkpoint
from .corpus import (
    CaptionRecord,
    DataError,
    ToyCorpusSpec,
    default_toy_spec,
    generate_toy_corpus,
    load_dataset,
    save_dataset,
    tokenize_records,
)
from .lm import DecodeConfig, DivergenceError, ModelConfig, generate_caption
from .metrics import load_score_file, score_corpus
from .oracle import (
    COMBINED,
    SWEEP_CATEGORIES,
    EquivalenceTable,
    SweepConfig,
    cell_bags,
    emit_report,
    equivalence_report,
    prepare_dataset,
    read_points_csv,
    sweep_k,
    sweep_noise,
)
from .tagger import TaggerModel, accuracy, fixture_model, load_pretagged, read_conll, tag_tokens, train_tagger
from .trainer import SearchSpace, TrainConfig, gradient_check, random_search, train_model
from .util import derive_seed, git_blob_hash, write_json

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED, EXIT_CHECK_FAILED = 0, 1, 2, 3, 4
GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# run manifests

@dataclass
class RunManifest:
    subcommand: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    version: str = __version__

    def input_hashes(self) -> dict[str, str]:
        return {name: git_blob_hash(p) for name, p in sorted(self.inputs.items())
                if p and Path(p).is_file()}

    def to_json(self) -> dict:
        return {"subcommand": self.subcommand, "config": self.config, "inputs": self.inputs,
                "input_hashes": self.input_hashes(), "outputs": self.outputs, "seed": self.seed,
                "version": self.version}

    def write(self, path: str | Path | None) -> None:
        """Write next to the outputs, or as one JSON line on stderr when there is no file."""
        if path is None:
            print("manifest: " + json.dumps(self.to_json(), sort_keys=True), file=sys.stderr)
        else:
            write_json(path, self.to_json())


def _manifest_path(args, primary: str | Path | None) -> Path | None:
    if args.manifest:
        return Path(args.manifest)
    return None if primary is None else Path(str(primary) + ".manifest.json")


def resolve_seed(flag: int | None, config_seed: int | None, default: int = 0) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("CAPORA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"CAPORA_SEED must be an integer, got {env!r}") from None
    return default if config_seed is None else int(config_seed)


# ---------------------------------------------------------------------------
# shared data loading

def _load_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})") from None


def _load_records(data: str, base: Path | None = None) -> list[CaptionRecord]:
    """``toy`` (the bundled toy corpus), ``toy:<spec.json>`` or a dataset path."""
    if data == "toy":
        return generate_toy_corpus(default_toy_spec()).records
    if data.startswith("toy:"):
        return generate_toy_corpus(ToyCorpusSpec.from_json(_rel(data[4:], base))).records
    return load_dataset(_rel(data, base))


def _rel(path: str, base: Path | None) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base is None else base / p


def _tagger(path: str | None) -> TaggerModel:
    return fixture_model() if path is None else TaggerModel.load(path)


def _parse_ks(text: str) -> tuple:
    out = []
    for part in text.split(","):
        part = part.strip()
        out.append("all" if part == "all" else int(part))
    return tuple(out)


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(","))


def _category_arg(text: str) -> str:
    for c in SWEEP_CATEGORIES:
        if c.lower() == text.lower():
            return c
    raise argparse.ArgumentTypeError(f"unknown category {text!r}; choose from {', '.join(SWEEP_CATEGORIES)}")


# ---------------------------------------------------------------------------
# experiment configuration

DATA_KEYS = ("data", "tagger", "gold_tags", "vocab_cap")


def experiment_config(args) -> tuple[dict, SweepConfig, Path | None]:
    """Merge ``--config`` with flags; returns (data settings, sweep config, config dir)."""
    raw, base = {}, None
    if args.config:
        raw = _load_json(args.config)
        base = Path(args.config).resolve().parent
    raw = dict(raw)
    data = {k: raw.pop(k) for k in DATA_KEYS if k in raw}
    data.setdefault("data", "toy")
    data.setdefault("tagger", None)
    data.setdefault("gold_tags", False)
    data.setdefault("vocab_cap", 20000)
    if args.data is not None:
        data["data"] = args.data
        base = None
    if args.tagger is not None:
        data["tagger"] = args.tagger
    if args.gold_tags:
        data["gold_tags"] = True
    try:
        sweep = SweepConfig.from_json(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad experiment config: {exc}") from None
    over = {}
    for name in ("word_embed_dim", "atom_embed_dim", "hidden_dim", "beam_width", "max_len", "search_trials"):
        if getattr(args, name, None) is not None:
            over[name] = getattr(args, name)
    try:
        if getattr(args, "ks", None):
            over["ks"] = _parse_ks(args.ks)
        if getattr(args, "categories", None):
            over["categories"] = tuple(_category_arg(c) for c in args.categories.split(","))
        if getattr(args, "rs", None):
            over["rs"] = _parse_floats(args.rs)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"bad flag value: {exc}") from None
    if getattr(args, "metrics", None):
        over["metrics"] = tuple(args.metrics.split(","))
    train_over = {}
    for name in ("patience", "max_updates", "minibatch"):
        if getattr(args, name, None) is not None:
            train_over[name] = getattr(args, name)
    over["seed"] = resolve_seed(args.seed, raw.get("seed"))
    try:
        sweep = replace(sweep, train=replace(sweep.train, **train_over), **over)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad experiment config: {exc}") from None
    return data, sweep, base


def _dataset(data: dict, base: Path | None):
    records = _load_records(data["data"], base)
    tagger = None if data["gold_tags"] else _tagger(data["tagger"] and str(_rel(data["tagger"], base)))
    return prepare_dataset(records, tagger, bool(data["gold_tags"]), int(data["vocab_cap"]))


# ---------------------------------------------------------------------------
# subcommands

def cmd_toygen(args) -> int:
    spec = ToyCorpusSpec.from_json(args.spec) if args.spec else default_toy_spec()
    if args.seed is not None or "CAPORA_SEED" in os.environ:
        spec = replace(spec, seed=resolve_seed(args.seed, spec.seed))
    if args.n is not None:
        spec = replace(spec, n_captions=args.n)
    corpus = generate_toy_corpus(spec)
    save_dataset(corpus.records, args.out)
    outputs = {"dataset": args.out}
    if args.atoms_out:
        with open(args.atoms_out, "w", encoding="utf-8") as fh:
            for r in corpus.records:
                fh.write(json.dumps({"id": r.id, "atoms": sorted(map(str, corpus.atoms[r.id]))}) + "\n")
        outputs["atoms"] = args.atoms_out
    RunManifest("toygen", spec.to_json(), {"spec": args.spec or ""}, outputs, spec.seed).write(
        _manifest_path(args, args.out))
    print(f"wrote {len(corpus.records)} captions to {args.out}")
    return EXIT_OK


def cmd_tag(args) -> int:
    if args.action == "train":
        if args.corpus:
            sents = read_conll(args.corpus)
        elif args.data:
            sents = load_pretagged(tokenize_records(load_dataset(args.data)))
        else:
            raise UsageError("tag train: give --corpus (CoNLL) or --data (records with tags)")
        seed = resolve_seed(args.seed, None)
        try:
            model = train_tagger(sents, epochs=args.epochs, seed=seed)
        except ValueError as exc:
            raise DataError(str(exc)) from None
        model.save(args.out)
        RunManifest("tag train", {"epochs": args.epochs, "seed": seed},
                    {"corpus": args.corpus or args.data}, {"model": args.out}, seed).write(
            _manifest_path(args, args.out))
        print(f"held-out accuracy: {model.metadata['heldout_accuracy']}")
        return EXIT_OK

    model = _tagger(args.model)
    if args.corpus:
        acc = accuracy(model, read_conll(args.corpus))
        print(f"accuracy: {acc:.6f}")
        RunManifest("tag apply", {"mode": "evaluate"}, {"model": args.model or "<fixture>",
                    "corpus": args.corpus}, {}, None).write(_manifest_path(args, args.out))
        return EXIT_OK
    if not args.data or not args.out:
        raise UsageError("tag apply: give --data and --out (or --corpus to evaluate)")
    records = tokenize_records(load_dataset(args.data))
    tagged = [CaptionRecord(r.id, r.split, r.text, r.tokens, tuple(tag_tokens(model, r.tokens)))
              for r in records]
    save_dataset(tagged, args.out)
    RunManifest("tag apply", {}, {"model": args.model or "<fixture>", "data": args.data},
                {"dataset": args.out}, None).write(_manifest_path(args, args.out))
    print(f"tagged {len(tagged)} captions")
    return EXIT_OK


def cmd_atoms(args) -> int:
    records = tokenize_records(_load_records(args.data))
    if args.gold_tags:
        tags = {r.id: r.gold_tags for r in records}
        if any(t is None for t in tags.values()):
            raise DataError("--gold-tags given but some records carry no tags")
    else:
        model = _tagger(args.tagger)
        tags = {r.id: tag_tokens(model, r.tokens) for r in records}
    atoms = {r.id: extract_atoms(r.tokens, tags[r.id]) for r in records}
    table = build_frequency_table(atoms[r.id] for r in records if r.split == "train")
    table.to_tsv(args.out)
    outputs = {"table": args.out}
    if args.atoms_out:
        with open(args.atoms_out, "w", encoding="utf-8") as fh:
            for r in records:
                fh.write(json.dumps({"id": r.id, "atoms": sorted(map(str, atoms[r.id]))}) + "\n")
        outputs["atoms"] = args.atoms_out
    if args.k is not None:
        cat = None if args.category in (None, COMBINED) else AtomCategory(args.category)
        topk = select_top_k(table, args.k, cat)
        path = args.topk_out or str(args.out) + f".top{args.k}.json"
        write_json(path, topk.to_json())
        outputs["topk"] = path
    RunManifest("atoms", {"gold_tags": args.gold_tags, "k": args.k, "category": args.category},
                {"data": args.data, "tagger": args.tagger or ""}, outputs, None).write(
        _manifest_path(args, args.out))
    sizes = ", ".join(f"{c.value} {len(v)}" for c, v in table.ranked.items())
    print(f"atoms: {sizes}")
    return EXIT_OK


def cmd_train(args) -> int:
    data, sweep, base = experiment_config(args)
    ds = _dataset(data, base)
    k = ds.max_k(args.category) if args.k == "all" else int(args.k)
    bags = cell_bags(ds, args.category, k, args.r, sweep.seed)
    idx = ds.atom_index

    def examples(split):
        return [(ds.vocab.encode(it.tokens), sorted(idx[a] for a in bags[it.id])) for it in ds.split(split)]

    model_cfg = sweep.model_config(len(ds.vocab), len(ds.atom_list))
    train_cfg = replace(sweep.train, seed=derive_seed(sweep.seed, "cell", args.category, k))
    if sweep.search_trials > 0:
        found = random_search(SearchSpace(), sweep.search_trials, examples("train"), examples("valid"),
                              model_cfg, train_cfg, seed=train_cfg.seed, jobs=args.jobs)
        params, log = found.best.params, found.best.log
    else:
        result = train_model(examples("train"), examples("valid"), model_cfg, train_cfg)
        params, log = result.params, result.log
    save_checkpoint(args.out, params, {
        "vocab": list(ds.vocab.word_of), "atoms": [str(a) for a in ds.atom_list],
        "cell": {"category": args.category, "k": k, "r": args.r, "seed": sweep.seed},
        "data": data})
    log_path = str(args.out) + ".log.jsonl"
    log.write_jsonl(log_path)
    RunManifest("train", {**sweep.to_json(), "data": data, "category": args.category, "k": k, "r": args.r},
                {"data": str(_rel(data["data"], base)) if data["data"] != "toy" else "toy",
                 "config": args.config or ""},
                {"checkpoint": args.out, "log": log_path}, sweep.seed).write(_manifest_path(args, args.out))
    print(f"best validation NLL {log.best_valid_nll:.6f} at update {log.best_update} ({log.stop_reason})")
    return EXIT_OK


def cmd_generate(args) -> int:
    try:
        params, meta = load_checkpoint(args.model)
    except ContainerError as exc:
        raise DataError(str(exc)) from None
    cell = meta.get("cell", {})
    data = dict(meta.get("data", {"data": "toy", "tagger": None, "gold_tags": False, "vocab_cap": 20000}))
    if args.data is not None:
        data["data"] = args.data
    ds = _dataset(data, None)
    if list(ds.vocab.word_of) != meta.get("vocab"):
        raise DataError("dataset vocabulary differs from the checkpoint's")
    atom_index = {a: i for i, a in enumerate(meta["atoms"])}
    bags = cell_bags(ds, cell.get("category", COMBINED), int(cell.get("k", 0)), float(cell.get("r", 0.0)),
                     int(cell.get("seed", 0)))
    decode = DecodeConfig(args.beam_width, args.max_len)
    cands, refs = [], []
    for it in ds.split(args.split):
        bag = sorted(atom_index[str(a)] for a in bags[it.id])
        words = ds.vocab.decode(generate_caption(params, bag, decode))
        cands.append({"id": it.id, "caption": " ".join(words)})
        refs.append({"id": it.id, "captions": [" ".join(it.tokens)]})
    write_json(args.out, {"candidates": cands, "references": refs})
    RunManifest("generate", {"split": args.split, "beam_width": args.beam_width, "max_len": args.max_len,
                             "cell": cell, "data": data},
                {"model": args.model}, {"predictions": args.out}, cell.get("seed")).write(
        _manifest_path(args, args.out))
    print(f"wrote {len(cands)} captions to {args.out}")
    return EXIT_OK


def cmd_score(args) -> int:
    report = score_corpus(load_score_file(args.predictions))
    for name, value in report.scores().items():
        label = "meteor_lite (M-lite)" if name == "meteor_lite" else name
        print(f"{label:<22} {value:.6f}")
    if args.out:
        write_json(args.out, report.to_json())
    RunManifest("score", {}, {"predictions": args.predictions},
                {"report": args.out} if args.out else {}, None).write(_manifest_path(args, args.out))
    return EXIT_OK


def _cmd_sweep(args, noise: bool) -> int:
    data, sweep, base = experiment_config(args)
    if noise and args.k is not None:
        try:
            sweep = replace(sweep, ks=_parse_ks(args.k))
        except ValueError as exc:
            raise UsageError(f"bad --k: {exc}") from None
    ds = _dataset(data, base)
    runner = sweep_noise if noise else sweep_k
    points = runner(ds, sweep, out_dir=args.out, jobs=args.jobs)
    name = "sweep-noise" if noise else "sweep-k"
    table = EquivalenceTable.load(args.reference)
    manifest = RunManifest(name, {**sweep.to_json(), "data": data},
                           {"data": str(_rel(data["data"], base)) if not data["data"].startswith("toy")
                            else data["data"], "config": args.config or ""},
                           {"points": "points.csv", "equivalence": "equivalence.json", "cells": "cells/"},
                           sweep.seed)
    emit_report(points, table, args.out, {"run": manifest.to_json()})
    if args.manifest:
        manifest.write(args.manifest)
    failed = sorted({(p.category, p.k, p.r) for p in points if p.status != "ok"})
    for p in points:
        shown = "failed" if p.score is None else f"{p.score:.4f}"
        print(f"{p.category:<10} k={p.k:<4} r={p.r:<5g} {p.metric:<12} {shown}")
    if failed:
        print(f"{len(failed)} cell(s) diverged: {failed}", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    table = EquivalenceTable.load(args.reference)
    points = read_points_csv(args.points) if args.points else None
    print(table.render(), end="")
    outputs = {}
    if points is not None:
        eq = equivalence_report(points, table)
        print("\nEquivalent k on the measured curves (piecewise-linear):")
        for e in eq["lookups"]:
            for cat, k in e["equivalent_k"].items():
                shown = k if isinstance(k, str) else f"{k:.2f}"
                print(f"  {e['dataset']:<13} {e['column']:<3} {e['system']:<6} {cat:<10} {shown}")
        if args.out:
            write_json(args.out, eq)
            outputs["equivalence"] = args.out
    RunManifest("report", {}, {"points": args.points or "", "reference": args.reference or ""},
                outputs, None).write(_manifest_path(args, args.out))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = resolve_seed(args.seed, None)
    cfg = ModelConfig(args.vocab, args.atoms, args.embed, args.embed, args.hidden)
    report = gradient_check(cfg, seed, args.step)
    ok = report.max_rel_error <= GRADCHECK_TOLERANCE
    print(f"max relative error: {report.max_rel_error:.3e} at {report.tensor}{list(report.index)} "
          f"({report.n_coordinates} coordinates) {'ok' if ok else 'FAILED'}")
    if args.out:
        write_json(args.out, report.to_json())
    RunManifest("gradcheck", {"model": cfg.to_json(), "step": args.step}, {},
                {"report": args.out} if args.out else {}, seed).write(_manifest_path(args, args.out))
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# parser

def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON (flags override its values)")
    p.add_argument("--data", help="dataset path, 'toy' or 'toy:<spec.json>' (default: toy)")
    p.add_argument("--tagger", help="tagger checkpoint (default: bundled fixture tagger)")
    p.add_argument("--gold-tags", action="store_true", help="use the records' own tags")
    p.add_argument("--seed", type=int, help="master seed")
    for name in ("word-embed-dim", "atom-embed-dim", "hidden-dim", "patience", "max-updates",
                 "minibatch", "beam-width", "max-len", "search-trials"):
        p.add_argument(f"--{name}", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="capora", description=__doc__.split("\n")[0],
                     epilog="Precedence: flags > --config file > defaults.  CAPORA_SEED overrides config seeds.")
    parser.add_argument("--version", action="version", version=f"capora {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--manifest", help="run manifest path (default: <output>.manifest.json)")
        return p

    p = add("toygen", "generate the synthetic toy corpus")
    p.add_argument("--spec", help="toy corpus spec JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, help="number of captions")
    p.add_argument("--out", required=True)
    p.add_argument("--atoms-out", help="also write the true atoms per caption (JSONL)")
    p.set_defaults(func=cmd_toygen)

    p = add("tag", "train or apply the part-of-speech tagger")
    p.add_argument("action", choices=("train", "apply"))
    p.add_argument("--corpus", help="CoNLL token<TAB>tag file")
    p.add_argument("--data", help="caption dataset (JSONL/TSV)")
    p.add_argument("--model", help="tagger checkpoint for apply (default: bundled fixture)")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_tag)

    p = add("atoms", "extract atoms and write the frequency table")
    p.add_argument("--data", default="toy")
    p.add_argument("--tagger")
    p.add_argument("--gold-tags", action="store_true")
    p.add_argument("--k", type=int, help="also write the top-k list")
    p.add_argument("--category", type=_category_arg, default=COMBINED)
    p.add_argument("--topk-out")
    p.add_argument("--atoms-out")
    p.add_argument("--out", required=True, help="frequency table TSV")
    p.set_defaults(func=cmd_atoms)

    p = add("train", "train one oracle language model")
    _experiment_flags(p)
    p.add_argument("--k", default="all", type=lambda s: s if s == "all" else int(s))
    p.add_argument("--category", type=_category_arg, default=COMBINED)
    p.add_argument("--r", type=float, default=0.0, help="corruption rate")
    p.add_argument("--jobs", type=int, default=1, help="parallel random-search trials")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = add("generate", "decode captions with a trained checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="dataset (default: the one recorded in the checkpoint)")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--beam-width", type=int, default=5)
    p.add_argument("--max-len", type=int, default=30)
    p.add_argument("--out", required=True, help="predictions JSON (input format of 'score')")
    p.set_defaults(func=cmd_generate)

    p = add("score", "BLEU, METEOR-lite and CIDEr on a predictions file")
    p.add_argument("predictions")
    p.add_argument("--out", help="ScoreReport JSON")
    p.set_defaults(func=cmd_score)

    for name, noise in (("sweep-k", False), ("sweep-noise", True)):
        p = add(name, "oracle score versus corruption rate r" if noise else "oracle score versus atom count k")
        _experiment_flags(p)
        p.add_argument("--ks", help="comma-separated atom counts ('all' allowed)")
        p.add_argument("--categories", help="comma-separated subset of " + ",".join(SWEEP_CATEGORIES))
        p.add_argument("--metrics", help="comma-separated metric names")
        if noise:
            p.add_argument("--rs", help="comma-separated corruption rates")
            p.add_argument("--k", help="fixed atom count (same as --ks with one value)")
        p.add_argument("--reference", help="reference constants JSON (default: bundled)")
        p.add_argument("--jobs", type=int, default=1, help="cells run in parallel")
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(func=_cmd_sweep, noise=noise)

    p = add("report", "render the reference tables and equivalence lookups")
    p.add_argument("--points", help="points.csv from a sweep")
    p.add_argument("--reference", help="reference constants JSON (default: bundled)")
    p.add_argument("--out", help="equivalence JSON")
    p.set_defaults(func=cmd_report)

    p = add("gradcheck", "finite-difference check of the analytic gradients")
    p.add_argument("--seed", type=int)
    p.add_argument("--vocab", type=int, default=7)
    p.add_argument("--atoms", type=int, default=3)
    p.add_argument("--embed", type=int, default=5)
    p.add_argument("--hidden", type=int, default=4)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--out", help="report JSON")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.func is _cmd_sweep:
            return _cmd_sweep(args, args.noise)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"capora: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, ContainerError, FileNotFoundError, KeyError) as exc:
        print(f"capora: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch())
