"""Write the synthetic corpora used by the tests to disk.

Produces, under OUT_DIR:
  overfit.tsv                dataset records for the 20-record overfit run
  raw/metadata.tsv           item descriptions for build-dataset
  raw/gazetteer.tsv          surface form, entity id, type
  raw/interactions.tsv       user, item, rating
"""

import argparse
from pathlib import Path

from kgxrec.records import write_records
from kgxrec.synthetic import make_overfit_corpus, make_planted_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--items", type=int, default=12, help="items in the planted description corpus")
    args = ap.parse_args()

    args.out_dir.mkdir(parents=True, exist_ok=True)
    n = write_records(args.out_dir / "overfit.tsv", make_overfit_corpus(seed=args.seed))
    print(f"overfit.tsv: {n} records")

    corpus = make_planted_corpus(n_items=args.items, seed=args.seed)
    raw = args.out_dir / "raw"
    raw.mkdir(exist_ok=True)
    with open(raw / "metadata.tsv", "w", encoding="utf-8") as fh:
        for item, desc in zip(corpus.items, corpus.descriptions):
            fh.write(f"{item.item_id}\t{item.name}\t{desc}\n")
    with open(raw / "gazetteer.tsv", "w", encoding="utf-8") as fh:
        for surface, (entity_id, kind) in sorted(corpus.gazetteer.items()):
            fh.write(f"{surface}\t{entity_id}\t{kind}\n")
    with open(raw / "interactions.tsv", "w", encoding="utf-8") as fh:
        for user, item, rating in corpus.interactions:
            fh.write(f"{user}\t{item}\t{rating}\n")
    print(f"raw/: {len(corpus.items)} items, {len(corpus.interactions)} interactions")


if __name__ == "__main__":
    main()
