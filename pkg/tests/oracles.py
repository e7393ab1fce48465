"""Brute-force references used by several test modules."""
import numpy as np


def full_sort_rank(scores, true_tail, known_tails=(), filtered=True):
    """Rank by sorting all candidates; tied candidates share the mean of their positions."""
    candidates = [e for e in range(len(scores)) if not (filtered and e != true_tail and e in set(known_tails))]
    ordered = sorted(candidates, key=lambda e: -scores[e])
    target = scores[true_tail]
    positions = [pos + 1 for pos, e in enumerate(ordered) if scores[e] == target]
    return sum(positions) / len(positions)


def full_sort_metrics(score_rows, triples, known):
    ranks = []
    for scores, (h, r, t) in zip(score_rows, triples):
        ranks.append(full_sort_rank(scores, t, known.get((h, r), ()), filtered=True))
    ranks = np.array(ranks)
    return ranks, {"mrr": np.mean(1 / ranks), "hits1": np.mean(ranks <= 1),
                   "hits3": np.mean(ranks <= 3), "hits10": np.mean(ranks <= 10)}
