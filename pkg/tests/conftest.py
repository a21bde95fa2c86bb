"""Shared toy datasets and an expensively trained model reused across tests."""

import numpy as np
import pytest

from fairdiff import FairTabularDiffusion
from fairdiff.data import Column, Dataset, TableSchema


def make_mixture_dataset(n=5000, seed=11):
    """Two numeric columns driven by a binary component indicator."""
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < 0.6).astype(int)
    x1 = np.where(y == 1, 1.5, -1.5) + rng.standard_normal(n) * 0.6
    x2 = np.where(y == 1, -1.0, 1.0) + rng.standard_normal(n) * 0.8
    schema = TableSchema(
        columns=(
            Column("x1", "numerical"),
            Column("x2", "numerical"),
            Column("label", "categorical", ("a", "b")),
        ),
        target="label",
    )
    return Dataset(schema, np.stack([x1, x2, y], axis=1))


def make_biased_dataset(n, seed):
    """Binary outcome with a sensitive group leaking into feature x2.

    The planted coupling is P(grp=u | outcome=pos) = 0.8 and
    P(grp=u | outcome=neg) = 0.2.  x1 carries the legitimate signal,
    x2 is mostly a proxy for the group.
    """
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < 0.5).astype(int)
    s = np.where(rng.random(n) < np.where(y == 1, 0.8, 0.2), 0, 1)
    x1 = 2.4 * y + rng.standard_normal(n)
    x2 = 2.0 * s + 0.5 * rng.standard_normal(n)
    schema = TableSchema(
        columns=(
            Column("x1", "numerical"),
            Column("x2", "numerical"),
            Column("grp", "categorical", ("u", "v")),
            Column("outcome", "categorical", ("neg", "pos")),
        ),
        target="outcome",
        sensitive=("grp",),
    )
    return Dataset(schema, np.stack([x1, x2, s, y], axis=1))


@pytest.fixture(scope="session")
def bias_model():
    """Model trained once on the planted-bias toy; sampling tests share it."""
    train = make_biased_dataset(5000, seed=13)
    est = FairTabularDiffusion(
        timesteps=100, epochs=400, hidden=64, depth=2, batch_size=256,
        learning_rate=1e-3, seed=0, w_s=1.0, lam=4.0, delta=10, w_m=0.0,
    )
    est.fit(train)
    return train, est
