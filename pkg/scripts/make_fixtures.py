"""Regenerate the committed tagger fixtures under src/capora/data/.

    python scripts/make_fixtures.py
"""

from pathlib import Path

from capora.corpus import ToyCorpusSpec, generate_toy_corpus
from capora.tagger import tag_tokens, train_tagger, write_conll

DATA = Path(__file__).resolve().parents[1] / "src" / "capora" / "data"

GOLDEN_INPUTS = [
    ["the"],
    ["a", "red", "dog", "runs"],
    ["a", "man", "runs"],
    ["the", "small", "cat", "sleeping", "near", "the", "river", "."],
    ["two", "dogs", "are", "swimming", "in", "the", "river", "."],
    ["a", "girl", "with", "a", "yellow", "kite", "."],
    ["she", "is", "holding", "a", "blue", "umbrella", "."],
]


def main():
    spec = ToyCorpusSpec.from_json(DATA / "tagger_templates.json")
    corpus = generate_toy_corpus(spec)
    sents = [(list(r.tokens), list(r.gold_tags)) for r in corpus.records]
    write_conll(sents, DATA / "tagged_corpus.tsv")

    model = train_tagger(sents, epochs=5, seed=0)
    model.save(DATA / "tagger_fixture.ckpt")
    print("held-out accuracy", model.metadata["heldout_accuracy"])

    with (DATA / "tagger_golden.tsv").open("w", encoding="utf-8") as fh:
        for toks in GOLDEN_INPUTS:
            fh.write(" ".join(toks) + "\t" + " ".join(tag_tokens(model, toks)) + "\n")


if __name__ == "__main__":
    main()
