"""Quality and fairness metrics for synthetic tables, plus the level sweep.

Data-based checks compare synthetic rows against real splits (column
densities, pairwise association, distance to closest record). Model-based
checks train a classifier on synthetic rows and score it on real test rows:
AUC for utility, demographic parity ratio and equalized odds ratio for
fairness, combined into one weighted score.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import ks_2samp, rankdata
from sklearn.ensemble import GradientBoostingClassifier
from sklearn.linear_model import LogisticRegression

from .data import CATEGORICAL, NUMERICAL
from .preprocessing import TableEncoder

logger = logging.getLogger("fairdiff")

DEFAULT_WEIGHTS = (0.5, 0.25, 0.25)
CLASSIFIER_KINDS = ("stumps", "logistic")


def _check_same_columns(real, synth):
    if real.schema.names != synth.schema.names:
        raise ValueError("real and synthetic column sets differ")
    if len(real) == 0 or len(synth) == 0:
        raise ValueError("need non-empty datasets")


def _tv_distance(p, q):
    return 0.5 * float(np.abs(p - q).sum())


def _category_freqs(ds, name):
    card = ds.schema.column(name).cardinality
    counts = np.bincount(ds.column_values(name).astype(int), minlength=card)
    return counts / counts.sum()


def column_density_error(real, synth):
    """Mean per-column distribution gap: two-sample KS statistic for
    numerical columns, total variation of category frequencies otherwise."""
    _check_same_columns(real, synth)
    gaps = []
    for col in real.schema.columns:
        if col.kind == NUMERICAL:
            stat = ks_2samp(
                real.column_values(col.name), synth.column_values(col.name)
            ).statistic
            gaps.append(float(stat))
        else:
            gaps.append(
                _tv_distance(
                    _category_freqs(real, col.name),
                    _category_freqs(synth, col.name),
                )
            )
    return float(np.mean(gaps))


def _pearson(x, y):
    if np.std(x) == 0.0 or np.std(y) == 0.0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def _cramers_v(x, y, kx, ky):
    """Association between two category columns; None if either is constant."""
    if len(np.unique(x)) < 2 or len(np.unique(y)) < 2:
        return None
    table = np.zeros((kx, ky))
    np.add.at(table, (x.astype(int), y.astype(int)), 1.0)
    n = table.sum()
    rows = table.sum(axis=1, keepdims=True)
    cols = table.sum(axis=0, keepdims=True)
    expected = rows * cols / n
    with np.errstate(invalid="ignore", divide="ignore"):
        cells = np.where(expected > 0, (table - expected) ** 2 / expected, 0.0)
    chi2 = cells.sum()
    r_eff = int((rows > 0).sum())
    c_eff = int((cols > 0).sum())
    denom = n * (min(r_eff, c_eff) - 1)
    return float(np.sqrt(chi2 / denom))


def _correlation_ratio(values, groups):
    """eta: share of numeric variance explained by the category; None if
    the numeric column is constant."""
    total = np.sum((values - values.mean()) ** 2)
    if total == 0.0:
        return None
    if len(np.unique(groups)) < 2:
        return 0.0
    between = 0.0
    for g in np.unique(groups):
        sel = values[groups == g]
        between += sel.size * (sel.mean() - values.mean()) ** 2
    return float(np.sqrt(between / total))


def _association(ds, col_a, col_b):
    a = ds.column_values(col_a.name)
    b = ds.column_values(col_b.name)
    if col_a.kind == NUMERICAL and col_b.kind == NUMERICAL:
        return _pearson(a, b)
    if col_a.kind == CATEGORICAL and col_b.kind == CATEGORICAL:
        return _cramers_v(a, b, col_a.cardinality, col_b.cardinality)
    if col_a.kind == NUMERICAL:
        return _correlation_ratio(a, b.astype(int))
    return _correlation_ratio(b, a.astype(int))


def pairwise_correlation_error(real, synth):
    """Mean absolute gap between association matrices over column pairs.

    Pearson for numeric pairs, Cramer's V for categorical pairs, the
    correlation ratio for mixed pairs. Pairs involving a constant column in
    either table are skipped with a warning; no pairs at all reports 0.
    """
    _check_same_columns(real, synth)
    cols = real.schema.columns
    gaps = []
    skipped = 0
    for i in range(len(cols)):
        for j in range(i + 1, len(cols)):
            ar = _association(real, cols[i], cols[j])
            asyn = _association(synth, cols[i], cols[j])
            if ar is None or asyn is None:
                skipped += 1
                logger.warning(
                    "skipping pair (%s, %s): constant column",
                    cols[i].name, cols[j].name,
                )
                continue
            gaps.append(abs(ar - asyn))
    if not gaps:
        logger.warning("no valid column pairs; correlation error reported as 0")
        return 0.0
    return float(np.mean(gaps))


def dcr(train, holdout, synth, encoder=None):
    """Distance-to-closest-record diagnostics in encoded space.

    Returns (dcr_distance, dcr_closeness): the median nearest-train
    distance of synthetic rows normalized by the holdout's own such median,
    and the fraction of synthetic rows strictly closer to train than to
    holdout (0.5 is ideal).
    """
    for name, ds in (("train", train), ("holdout", holdout), ("synth", synth)):
        if len(ds) == 0:
            raise ValueError(f"{name} set is empty")
    if encoder is None:
        encoder = TableEncoder(allow_constant=True).fit(train)
    enc_train = encoder.transform(train).concat()
    enc_hold = encoder.transform(holdout).concat()
    enc_synth = encoder.transform(synth).concat()
    train_tree = cKDTree(enc_train)
    hold_tree = cKDTree(enc_hold)
    d_synth_train = train_tree.query(enc_synth, k=1)[0]
    d_synth_hold = hold_tree.query(enc_synth, k=1)[0]
    d_hold_train = train_tree.query(enc_hold, k=1)[0]
    ref = float(np.median(d_hold_train))
    if ref == 0.0:
        logger.warning("holdout rows coincide with train; dcr_distance is inf")
        distance = float("inf")
    else:
        distance = float(np.median(d_synth_train)) / ref
    closeness = float(np.mean(d_synth_train < d_synth_hold))
    return distance, closeness


class BuiltinClassifier:
    """Downstream model trained on synthetic rows, scored on real rows.

    Features are the raw numeric columns plus one-hot categoricals,
    excluding the target. Scores are predicted positive-class
    probabilities.
    """

    def __init__(self, kind="stumps", seed=0):
        if kind not in CLASSIFIER_KINDS:
            raise ValueError(f"classifier kind must be one of {CLASSIFIER_KINDS}")
        self.kind = kind
        self.seed = seed
        self.schema_ = None
        self.model_ = None

    def _features(self, ds):
        parts = []
        for col in ds.schema.columns:
            if col.name == ds.schema.target:
                continue
            vals = ds.column_values(col.name)
            if col.kind == NUMERICAL:
                parts.append(vals[:, None])
            else:
                onehot = np.zeros((len(ds), col.cardinality))
                onehot[np.arange(len(ds)), vals.astype(int)] = 1.0
                parts.append(onehot)
        return np.concatenate(parts, axis=1)

    def fit(self, dataset):
        schema = dataset.schema
        if schema.column(schema.target).cardinality != 2:
            raise ValueError("classifier needs a binary target")
        y = dataset.column_values(schema.target).astype(int)
        if np.unique(y).size < 2:
            raise ValueError("training data contains a single class")
        X = self._features(dataset)
        if self.kind == "stumps":
            self.model_ = GradientBoostingClassifier(
                max_depth=1,
                n_estimators=200,
                learning_rate=0.1,
                random_state=self.seed,
            )
        else:
            self.model_ = LogisticRegression(max_iter=1000)
        self.model_.fit(X, y)
        self.schema_ = schema
        return self

    def predict_scores(self, dataset):
        if self.model_ is None:
            raise RuntimeError("classifier is not fitted")
        return self.model_.predict_proba(self._features(dataset))[:, 1]

    def predict(self, dataset):
        return (self.predict_scores(dataset) >= 0.5).astype(int)


def train_classifier(synth, kind="stumps", seed=0):
    return BuiltinClassifier(kind=kind, seed=seed).fit(synth)


def auc(clf, test):
    """Rank-statistic AUC of the classifier's scores on real test rows;
    tied scores get half credit."""
    y = test.column_values(test.schema.target).astype(int)
    if np.unique(y).size < 2:
        raise ValueError("test set contains a single class")
    scores = clf.predict_scores(test)
    return auc_from_scores(y, scores)


def auc_from_scores(y_true, scores):
    y_true = np.asarray(y_true, dtype=int)
    ranks = rankdata(scores)
    n_pos = int(y_true.sum())
    n_neg = y_true.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need both classes to compute AUC")
    return float(
        (ranks[y_true == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    )


def selection_rates(predictions, groups):
    predictions = np.asarray(predictions, dtype=int)
    groups = np.asarray(groups, dtype=int)
    if predictions.shape != groups.shape:
        raise ValueError("predictions and groups must align")
    return {
        int(g): float(predictions[groups == g].mean()) for g in np.unique(groups)
    }


def _rate_ratio(rates):
    """min/max over group rates; all-zero rates count as perfectly equal."""
    values = np.asarray(list(rates), dtype=float)
    top = values.max()
    if top == 0.0:
        return 1.0
    return float(values.min() / top)


def dpr(predictions, groups, n_groups=None):
    """Demographic parity ratio: lowest/highest group selection rate."""
    rates = selection_rates(predictions, groups)
    if n_groups is not None and len(rates) < n_groups:
        logger.warning(
            "%d of %d groups have no members and are excluded",
            n_groups - len(rates), n_groups,
        )
    return _rate_ratio(rates.values())


def _eor_ratios(predictions, y_true, groups):
    """Cross-group TPR and FPR ratios with the degenerate-group policy.

    A group missing positives (or negatives) is excluded from the TPR (or
    FPR) ratio; a ratio with fewer than two remaining groups is dropped.
    Returns (ratios, degenerate) where degenerate means no ratio survived.
    """
    predictions = np.asarray(predictions, dtype=int)
    y_true = np.asarray(y_true, dtype=int)
    groups = np.asarray(groups, dtype=int)
    tprs, fprs = [], []
    for g in np.unique(groups):
        sel = groups == g
        pos = y_true[sel] == 1
        neg = ~pos
        if pos.sum() > 0:
            tprs.append(float(predictions[sel][pos].mean()))
        else:
            logger.warning("group %d has no positives; excluded from TPR ratio", g)
        if neg.sum() > 0:
            fprs.append(float(predictions[sel][neg].mean()))
        else:
            logger.warning("group %d has no negatives; excluded from FPR ratio", g)
    ratios = []
    if len(tprs) >= 2:
        ratios.append(_rate_ratio(tprs))
    if len(fprs) >= 2:
        ratios.append(_rate_ratio(fprs))
    return ratios, not ratios


def eor(predictions, y_true, groups):
    """Equalized odds ratio: the smaller of the TPR and FPR min/max ratios;
    1 when every ratio is degenerate."""
    ratios, degenerate = _eor_ratios(predictions, y_true, groups)
    if degenerate:
        logger.warning("all equalized-odds ratios degenerate; reporting 1.0")
        return 1.0
    return float(min(ratios))


def composite(auc_value, dpr_value, eor_value, weights=DEFAULT_WEIGHTS):
    """Weighted utility/fairness score, by default 0.5/0.25/0.25."""
    w = tuple(float(x) for x in weights)
    if len(w) != 3:
        raise ValueError("weights must have three entries")
    return float(w[0] * auc_value + w[1] * dpr_value + w[2] * eor_value)


@dataclass
class FairnessReport:
    density_error: float
    correlation_error: float
    dcr_distance: float
    dcr_closeness: float
    auc: float
    dpr: float
    eor: float
    composite: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.dpr <= 1.0:
            raise ValueError("dpr must lie in [0, 1]")
        if not 0.0 <= self.eor <= 1.0:
            raise ValueError("eor must lie in [0, 1]")
        if not 0.0 <= self.dcr_closeness <= 1.0:
            raise ValueError("dcr_closeness must lie in [0, 1]")

    @classmethod
    def build(cls, density_error, correlation_error, dcr_distance,
              dcr_closeness, auc_value, dpr_value, eor_value,
              weights=DEFAULT_WEIGHTS, metadata=None):
        meta = dict(metadata or {})
        meta.setdefault("weights", list(weights))
        return cls(
            density_error=float(density_error),
            correlation_error=float(correlation_error),
            dcr_distance=float(dcr_distance),
            dcr_closeness=float(dcr_closeness),
            auc=float(auc_value),
            dpr=float(dpr_value),
            eor=float(eor_value),
            composite=composite(auc_value, dpr_value, eor_value, weights),
            metadata=meta,
        )

    def to_dict(self):
        return {
            "density_error": self.density_error,
            "correlation_error": self.correlation_error,
            "dcr_distance": self.dcr_distance,
            "dcr_closeness": self.dcr_closeness,
            "auc": self.auc,
            "dpr": self.dpr,
            "eor": self.eor,
            "composite": self.composite,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


SWEEP_COLUMNS = (
    "level", "seed_count", "density", "correlation", "dcr_distance",
    "dcr_closeness", "auc", "dpr", "eor", "composite",
)


def _sweep_cell(args):
    pipeline, level, seed = args
    try:
        return pipeline(level, seed)
    except Exception as exc:
        raise RuntimeError(f"sweep failed at level {level}, seed {seed}: {exc}") from exc


def tradeoff_sweep(pipeline, levels, seeds, weights=DEFAULT_WEIGHTS, jobs=1):
    """Run pipeline(level, seed) -> FairnessReport over a level grid.

    Seed results are averaged per level; the composite is recomputed from
    the averaged utility/fairness fields. Task order is fixed, so the
    output is identical regardless of ``jobs``.
    """
    tasks = [(pipeline, level, seed) for level in levels for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_cell, tasks))
    else:
        results = [_sweep_cell(t) for t in tasks]
    rows = []
    per_level = len(seeds)
    for i, level in enumerate(levels):
        reports = results[i * per_level : (i + 1) * per_level]
        mean = lambda attr: float(np.mean([getattr(r, attr) for r in reports]))
        auc_m, dpr_m, eor_m = mean("auc"), mean("dpr"), mean("eor")
        rows.append({
            "level": int(level),
            "seed_count": per_level,
            "density": mean("density_error"),
            "correlation": mean("correlation_error"),
            "dcr_distance": mean("dcr_distance"),
            "dcr_closeness": mean("dcr_closeness"),
            "auc": auc_m,
            "dpr": dpr_m,
            "eor": eor_m,
            "composite": composite(auc_m, dpr_m, eor_m, weights),
        })
    return rows


SVG_SERIES = ("auc", "dpr", "eor", "composite")
_SVG_COLORS = ("#1f77b4", "#2ca02c", "#d62728", "#9467bd")


def sweep_svg(rows, width=640, height=400):
    """Hand-rolled line chart of the sweep metrics against the level."""
    margin = 48
    plot_w = width - 2 * margin
    plot_h = height - 2 * margin
    levels = [row["level"] for row in rows]
    lo, hi = min(levels), max(levels)
    span = max(hi - lo, 1)

    def xpos(level):
        return margin + plot_w * (level - lo) / span

    def ypos(value):
        return margin + plot_h * (1.0 - min(max(value, 0.0), 1.0))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = ypos(frac)
        parts.append(
            f'<text x="{margin - 6}" y="{y:.1f}" font-size="10" '
            f'text-anchor="end" dominant-baseline="middle">{frac:.2f}</text>'
        )
        parts.append(
            f'<line x1="{margin - 4}" y1="{y:.1f}" x2="{margin}" '
            f'y2="{y:.1f}" stroke="black"/>'
        )
    for level in levels:
        x = xpos(level)
        parts.append(
            f'<text x="{x:.1f}" y="{height - margin + 14}" font-size="10" '
            f'text-anchor="middle">{level}</text>'
        )
    for name, color in zip(SVG_SERIES, _SVG_COLORS):
        points = " ".join(
            f"{xpos(row['level']):.1f},{ypos(row[name]):.1f}" for row in rows
        )
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"/>'
        )
    for i, (name, color) in enumerate(zip(SVG_SERIES, _SVG_COLORS)):
        y = margin + 14 * i
        parts.append(
            f'<rect x="{width - margin - 90}" y="{y}" width="10" height="10" '
            f'fill="{color}"/>'
        )
        parts.append(
            f'<text x="{width - margin - 76}" y="{y + 9}" '
            f'font-size="11">{name}</text>'
        )
    parts.append(
        f'<text x="{width / 2:.0f}" y="{height - 8}" font-size="11" '
        f'text-anchor="middle">balancing level</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
