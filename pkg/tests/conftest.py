import numpy as np
import pytest

from linregime import Dataset, NuisanceFit


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_dataset(rng, n=50, l=2, intercept=False):
    """Small continuous dataset with both arms present."""
    cols = []
    names = []
    if intercept:
        cols.append(np.ones(n))
        names.append("intercept")
    for j in range(l - int(intercept)):
        cols.append(rng.normal(size=n))
        names.append("x%d" % (j + 1))
    x = np.column_stack(cols)
    a = rng.integers(0, 2, size=n)
    if a.min() == a.max():  # force both arms
        a[0] = 1 - a[0]
    y = rng.normal(size=n)
    return Dataset(x, a, y, tuple(names), has_intercept=intercept)


def random_nuisance(rng, n):
    e = rng.uniform(0.2, 0.8, size=n)
    return NuisanceFit(e_hat=e, mu0_hat=rng.normal(size=n), mu1_hat=rng.normal(size=n))


@pytest.fixture
def toy_dataset(rng):
    return random_dataset(rng, n=50, l=2)


@pytest.fixture
def toy_nuisance(rng, toy_dataset):
    return random_nuisance(rng, toy_dataset.n)
