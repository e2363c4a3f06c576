import numpy as np
import pytest

from sadrec.model import FactorModel

REPO_ROOT = __import__("pathlib").Path(__file__).resolve().parent.parent
SAMPLE_CSV = REPO_ROOT / "data" / "sample_interactions.csv"


def random_model(rng, n_users=4, n_items=6, k=3, tau_low=0.1, tau_high=2.0):
    """A generic well-conditioned model for probes."""
    return FactorModel(
        rng.standard_normal((k, n_users)),
        rng.standard_normal((k, n_items)),
        rng.uniform(tau_low, tau_high, (k, n_items)),
    )


def bpr_style_model(rng, n_users=4, n_items=6, k=3):
    """Right factors all ones: the classic dot-product special case."""
    return FactorModel(
        rng.standard_normal((k, n_users)),
        rng.standard_normal((k, n_items)),
        np.ones((k, n_items)),
    )


def make_synthetic_ratings(path, n_users=1200, n_items=500, seed=0, latent=6):
    """Movie-Lens-format synthetic ratings with latent user/item structure.

    Exposure is biased toward preferred and popular items, ratings are a
    quantized noisy readout of the same affinities, so implicit training
    signal and rating order are correlated but not identical.
    """
    from pathlib import Path

    rng = np.random.default_rng(seed)
    p = rng.standard_normal((n_users, latent))
    q = rng.standard_normal((n_items, latent)) / np.sqrt(latent)
    pop = rng.normal(0.0, 0.5, n_items)
    lines = []
    ts = 978300000
    for u in range(n_users):
        affinity = p[u] @ q.T
        n_u = int(rng.integers(15, 60))
        exposure = affinity + pop + rng.gumbel(0.0, 1.0, n_items)
        items = np.argsort(-exposure)[:n_u]
        for i in items:
            r = int(np.clip(round(3.0 + affinity[i] + rng.normal(0.0, 0.7)), 1, 5))
            lines.append(f"u{u}::i{i}::{r}::{ts}")
            ts += 1
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
