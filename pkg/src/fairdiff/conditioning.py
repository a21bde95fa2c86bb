"""Empirical label/sensitive joint estimation, balancing, and condition draws.

The sensitive attributes form K = prod(C_i) combinations indexed in
mixed-radix order (first attribute varies slowest). Balancing moves each
label's conditional combination distribution toward uniform by i/10 and
leaves the label marginal untouched.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_simplex
from .denoiser import ConditionSpec

BALANCE_MAX = 10


def check_balancing_level(level):
    lvl = int(level)
    if lvl != level or not 0 <= lvl <= BALANCE_MAX:
        raise ValueError(f"balancing level must be an integer in [0, {BALANCE_MAX}]")
    return lvl


@dataclass(frozen=True)
class ConditionTable:
    """Label marginal plus per-label simplex rows over sensitive combinations."""

    label_marginal: np.ndarray  # (L,)
    rows: np.ndarray  # (L, K)
    attribute_cards: tuple  # (C_1, ..., C_N); K = prod, 1 if N = 0

    def __post_init__(self):
        object.__setattr__(
            self, "label_marginal",
            check_simplex(np.asarray(self.label_marginal, dtype=float), "label marginal"),
        )
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] != self.label_marginal.size:
            raise ValueError("rows must be (n_labels, n_combinations)")
        object.__setattr__(self, "rows", check_simplex(rows, "conditional rows"))
        object.__setattr__(
            self, "attribute_cards", tuple(int(c) for c in self.attribute_cards)
        )
        K = int(np.prod(self.attribute_cards)) if self.attribute_cards else 1
        if rows.shape[1] != K:
            raise ValueError(
                f"rows have {rows.shape[1]} combinations, expected {K}"
            )

    @property
    def n_labels(self):
        return self.label_marginal.size

    @property
    def n_combinations(self):
        return self.rows.shape[1]

    def combination_tuple(self, k):
        """Combination index -> per-attribute category indices."""
        if not self.attribute_cards:
            return ()
        idx = np.unravel_index(int(k), self.attribute_cards)
        return tuple(int(v) for v in idx)

    def combination_index(self, values):
        if not self.attribute_cards:
            return 0
        return int(np.ravel_multi_index(tuple(values), self.attribute_cards))

    def joint(self):
        """Full joint P(label, combination)."""
        return self.label_marginal[:, None] * self.rows

    def to_dict(self):
        return {
            "label_marginal": self.label_marginal.tolist(),
            "rows": self.rows.tolist(),
            "attribute_cards": list(self.attribute_cards),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            label_marginal=np.asarray(d["label_marginal"], dtype=float),
            rows=np.asarray(d["rows"], dtype=float),
            attribute_cards=tuple(d["attribute_cards"]),
        )


def empirical_joint(dataset, schema=None):
    """Count the observed label marginal and per-label combination rows.

    Zero-count cells stay at probability 0 (no smoothing). A label value
    with no rows at all gets a uniform conditional row; its marginal is 0
    so it is never drawn.
    """
    schema = schema or dataset.schema
    if len(dataset) == 0:
        raise ValueError("cannot estimate the joint from an empty dataset")
    labels = dataset.column_values(schema.target).astype(int)
    L = schema.column(schema.target).cardinality
    cards = tuple(schema.column(s).cardinality for s in schema.sensitive)
    K = int(np.prod(cards)) if cards else 1
    if cards:
        sens = np.stack(
            [dataset.column_values(s).astype(int) for s in schema.sensitive],
            axis=1,
        )
        combos = np.ravel_multi_index(tuple(sens.T), cards)
    else:
        combos = np.zeros(len(dataset), dtype=int)
    counts = np.zeros((L, K))
    np.add.at(counts, (labels, combos), 1.0)
    label_counts = counts.sum(axis=1)
    marginal = label_counts / label_counts.sum()
    rows = np.where(
        label_counts[:, None] > 0,
        counts / np.maximum(label_counts[:, None], 1.0),
        1.0 / K,
    )
    return ConditionTable(marginal, rows, cards)


def balance(table, level):
    """Move each label row toward uniform: y + (mean(y) - y) * level / 10."""
    lvl = check_balancing_level(level)
    frac = lvl / BALANCE_MAX
    ybar = 1.0 / table.n_combinations
    rows = table.rows + (ybar - table.rows) * frac
    return ConditionTable(table.label_marginal.copy(), rows, table.attribute_cards)


def _largest_remainder(expected, rng):
    """Integer allocation with the exact total, remainder ties shuffled."""
    expected = np.asarray(expected, dtype=float)
    floors = np.floor(expected).astype(int)
    residual = int(round(expected.sum())) - int(floors.sum())
    if residual > 0:
        remainders = expected - floors
        tiebreak = rng.permutation(expected.size)
        order = np.lexsort((tiebreak, -remainders))
        floors[order[:residual]] += 1
    return floors


def draw_conditions(n, table, seed):
    """Stratified largest-remainder draw of n ConditionSpecs.

    Counts hit n * P(label) * P(combo | label) within one unit; the output
    order is a seeded shuffle.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    label_counts = _largest_remainder(n * table.label_marginal, rng)
    specs = []
    for lab in range(table.n_labels):
        if label_counts[lab] == 0:
            continue
        combo_counts = _largest_remainder(label_counts[lab] * table.rows[lab], rng)
        for k in range(table.n_combinations):
            if combo_counts[k]:
                spec = ConditionSpec(lab, table.combination_tuple(k))
                specs.extend([spec] * int(combo_counts[k]))
    order = rng.permutation(len(specs))
    return [specs[i] for i in order]
