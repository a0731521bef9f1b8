"""Shared fixtures: a small deterministic catalog with encodings."""

import numpy as np
import pytest

from mmbrowse.catalog import (
    EncodedCatalog,
    VocabConfig,
    build_vocabulary,
    generate_catalog,
)
from mmbrowse.numerics import STREAM_CATALOG, stream_rng

CATALOG_SEED = 7


@pytest.fixture(scope="session")
def vocab():
    return build_vocabulary(VocabConfig(), stream_rng(CATALOG_SEED, STREAM_CATALOG))


@pytest.fixture(scope="session")
def products(vocab):
    rng = stream_rng(CATALOG_SEED, STREAM_CATALOG, 1)
    return generate_catalog(vocab, 120, rng)


@pytest.fixture(scope="session")
def encoded(products, vocab):
    return EncodedCatalog.from_products(products, vocab, CATALOG_SEED)


def toy_encoded(points, prefix="T"):
    """EncodedCatalog over hand-placed low-dimensional image features."""
    pts = np.asarray(points, dtype=np.float64)
    ids = [f"{prefix}{i:03d}" for i in range(len(pts))]
    text = np.zeros((len(pts), 1))
    return EncodedCatalog(ids, pts, text)
