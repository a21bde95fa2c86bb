"""Reversible encoding of mixed-type tables for the diffusion model.

Numerical columns are mapped through an empirical-quantile gaussianizer;
categorical columns become one-hot blocks. The encoder is fit on training
rows only and inverts samples back to the original value domain.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from . import data as _data
from ._validation import NotFittedError, as_2d, check_fitted

RANK_EPS = 1e-7  # clip for ranks before the normal inverse CDF


class QuantileTransform:
    """Monotone map from one numerical column to an approximate N(0, 1).

    Training values get midpoint ranks (i - 0.5) / n with ties averaged;
    unseen values interpolate linearly between knots and clamp to the
    training min/max, so the inverse never extrapolates.
    """

    def __init__(self, allow_constant=False):
        self.allow_constant = allow_constant
        self.knot_values_ = None
        self.knot_ranks_ = None
        self.constant_ = None

    def fit(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.size == 0:
            raise ValueError("cannot fit quantile transform on empty column")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite value in numerical column")
        order = np.argsort(x, kind="stable")
        xs = x[order]
        n = x.size
        ranks = (np.arange(n) + 0.5) / n
        values, start = np.unique(xs, return_index=True)
        if values.size < 2:
            if not self.allow_constant:
                raise ValueError(
                    "numerical column is constant; pass allow_constant=True "
                    "to encode it as zeros"
                )
            self.constant_ = float(values[0])
            self.knot_values_ = values
            self.knot_ranks_ = np.array([0.5])
            return self
        # mean rank over each tied block
        stop = np.append(start[1:], n)
        cum = np.concatenate([[0.0], np.cumsum(ranks)])
        mean_ranks = (cum[stop] - cum[start]) / (stop - start)
        self.constant_ = None
        self.knot_values_ = values
        self.knot_ranks_ = mean_ranks
        return self

    def transform(self, x):
        check_fitted(self, "knot_values_")
        x = np.asarray(x, dtype=float)
        if self.constant_ is not None:
            return np.zeros_like(x)
        r = np.interp(x, self.knot_values_, self.knot_ranks_)
        return ndtri(np.clip(r, RANK_EPS, 1.0 - RANK_EPS))

    def inverse_transform(self, z):
        check_fitted(self, "knot_values_")
        z = np.asarray(z, dtype=float)
        if self.constant_ is not None:
            return np.full_like(z, self.constant_)
        r = ndtr(z)
        return np.interp(r, self.knot_ranks_, self.knot_values_)

    def fit_transform(self, x):
        return self.fit(x).transform(x)

    def to_dict(self):
        check_fitted(self, "knot_values_")
        return {
            "allow_constant": self.allow_constant,
            "constant": self.constant_,
            "knot_values": self.knot_values_.tolist(),
            "knot_ranks": self.knot_ranks_.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        qt = cls(allow_constant=d["allow_constant"])
        qt.constant_ = d["constant"]
        qt.knot_values_ = np.asarray(d["knot_values"], dtype=float)
        qt.knot_ranks_ = np.asarray(d["knot_ranks"], dtype=float)
        return qt


@dataclass
class EncodedBatch:
    """Numeric block plus per-column one-hot (or simplex) blocks."""

    numeric: np.ndarray  # (n, d_num)
    categorical: list  # list of (n, K_i) arrays

    def __post_init__(self):
        self.numeric = as_2d(np.asarray(self.numeric, dtype=float), "numeric")
        self.categorical = [
            as_2d(np.asarray(b, dtype=float), "categorical block")
            for b in self.categorical
        ]
        n = self.numeric.shape[0]
        for b in self.categorical:
            if b.shape[0] != n:
                raise ValueError("block row counts differ")

    def __len__(self):
        return self.numeric.shape[0]

    @property
    def width(self):
        return self.numeric.shape[1] + sum(b.shape[1] for b in self.categorical)

    def concat(self):
        return np.concatenate([self.numeric] + self.categorical, axis=1)

    @classmethod
    def split(cls, flat, num_width, cardinalities):
        flat = as_2d(np.asarray(flat, dtype=float), "flat")
        expected = num_width + sum(cardinalities)
        if flat.shape[1] != expected:
            raise ValueError(f"expected width {expected}, got {flat.shape[1]}")
        blocks = []
        off = num_width
        for k in cardinalities:
            blocks.append(flat[:, off : off + k])
            off += k
        return cls(numeric=flat[:, :num_width], categorical=blocks)


class TableEncoder:
    """fit/transform/inverse_transform between Dataset rows and EncodedBatch."""

    def __init__(self, allow_constant=False):
        self.allow_constant = allow_constant
        self.schema_ = None
        self.quantile_ = None

    def get_params(self, deep=True):
        return {"allow_constant": self.allow_constant}

    def set_params(self, **params):
        for k, v in params.items():
            if not hasattr(self, k):
                raise ValueError(f"unknown parameter {k!r}")
            setattr(self, k, v)
        return self

    def fit(self, dataset):
        if not dataset.schema.is_resolved():
            raise ValueError("schema must have resolved category lists")
        self.schema_ = dataset.schema
        self.quantile_ = {}
        for name in dataset.schema.numerical_names:
            qt = QuantileTransform(allow_constant=self.allow_constant)
            qt.fit(dataset.column_values(name))
            self.quantile_[name] = qt
        return self

    @property
    def num_width_(self):
        check_fitted(self, "schema_")
        return len(self.schema_.numerical_names)

    @property
    def cardinalities_(self):
        check_fitted(self, "schema_")
        return self.schema_.cardinalities

    @property
    def encoded_width_(self):
        return self.num_width_ + sum(self.cardinalities_)

    def transform(self, dataset):
        check_fitted(self, "schema_")
        if dataset.schema.names != self.schema_.names:
            raise ValueError("dataset schema does not match fitted schema")
        n = len(dataset)
        numeric = np.empty((n, self.num_width_))
        for j, name in enumerate(self.schema_.numerical_names):
            numeric[:, j] = self.quantile_[name].transform(
                dataset.column_values(name)
            )
        blocks = []
        for name in self.schema_.categorical_names:
            card = self.schema_.column(name).cardinality
            idx = dataset.column_values(name).astype(int)
            block = np.zeros((n, card))
            block[np.arange(n), idx] = 1.0
            blocks.append(block)
        return EncodedBatch(numeric=numeric, categorical=blocks)

    def inverse_transform(self, batch):
        check_fitted(self, "schema_")
        if batch.numeric.shape[1] != self.num_width_:
            raise ValueError("numeric width does not match fitted schema")
        if [b.shape[1] for b in batch.categorical] != self.cardinalities_:
            raise ValueError("categorical widths do not match fitted schema")
        n = len(batch)
        rows = np.empty((n, len(self.schema_.columns)))
        num_names = self.schema_.numerical_names
        cat_names = self.schema_.categorical_names
        for j, name in enumerate(num_names):
            col = self.schema_.index_of(name)
            rows[:, col] = self.quantile_[name].inverse_transform(
                batch.numeric[:, j]
            )
        for j, name in enumerate(cat_names):
            col = self.schema_.index_of(name)
            rows[:, col] = np.argmax(batch.categorical[j], axis=1)
        return _data.Dataset(self.schema_, rows)

    def to_dict(self):
        check_fitted(self, "schema_")
        return {
            "allow_constant": self.allow_constant,
            "schema": self.schema_.to_dict(),
            "quantile": {n: q.to_dict() for n, q in self.quantile_.items()},
        }

    @classmethod
    def from_dict(cls, d):
        enc = cls(allow_constant=d["allow_constant"])
        enc.schema_ = _data.TableSchema.from_dict(d["schema"])
        enc.quantile_ = {
            n: QuantileTransform.from_dict(q) for n, q in d["quantile"].items()
        }
        return enc
