"""How many false positive labels does label inversion inject?

Inverting one KvsAll example turns its |E| - p zeros into ones. At rate k the
expected count per epoch is about k * |D| * |E| for |D| training examples.
Prints that count for every dataset found under the data directory.

    python scripts/lp_arithmetic.py --data-dir data --rate 0.001
"""
import argparse
from pathlib import Path

from kgattack.attacks import lp_faulty_triples
from kgattack.kg_core import build_kvsall, load_dataset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data-dir", default="data")
    ap.add_argument("--rate", type=float, default=0.001)
    args = ap.parse_args()
    print(f"{'dataset':16s}{'|E|':>8s}{'|train|':>10s}{'|D|':>10s}{'per |D|':>14s}{'per |train|':>14s}")
    for d in sorted(p for p in Path(args.data_dir).iterdir() if (p / "train.txt").exists()):
        graph = load_dataset(d)
        n_d = len(build_kvsall(graph.train, graph.num_entities))
        n_ent = graph.num_entities
        print(f"{d.name:16s}{n_ent:>8d}{len(graph.train):>10d}{n_d:>10d}"
              f"{lp_faulty_triples(n_d, n_ent, args.rate):>14,.0f}"
              f"{lp_faulty_triples(len(graph.train), n_ent, args.rate):>14,.0f}")


if __name__ == "__main__":
    main()
