"""Independent reference implementations used to cross-check the package.

These deliberately avoid the library's own code paths: the CMC ranker sorts
and scans rows, Adam is a scalar loop, and the KL oracle is Monte-Carlo.
"""
from __future__ import annotations

import numpy as np


def brute_force_cmc(dist: np.ndarray, probe_ids, gallery_ids):
    """Single-trial CMC + mAP by explicit row sort and scan.

    Ties broken by gallery index ascending (stable sort on (distance, index)).
    Returns (rates array over ranks 1..G, map score).
    """
    dist = np.asarray(dist, dtype=np.float64)
    probe_ids = np.asarray(probe_ids)
    gallery_ids = np.asarray(gallery_ids)
    n_probe, n_gal = dist.shape
    hits = np.zeros(n_gal, dtype=np.float64)
    rr = []
    for p in range(n_probe):
        order = sorted(range(n_gal), key=lambda j: (dist[p, j], j))
        rank = None
        for pos, j in enumerate(order, start=1):
            if gallery_ids[j] == probe_ids[p]:
                rank = pos
                break
        assert rank is not None, "probe identity missing from gallery"
        hits[rank - 1 :] += 1.0
        rr.append(1.0 / rank)
    return hits / n_probe, float(np.mean(rr))


def scalar_adam_step(theta, g, m, v, t, lr=0.002, beta1=0.5, beta2=0.999, eps=1e-8):
    """One textbook Adam update on plain python floats."""
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    theta = theta - lr * m_hat / (v_hat ** 0.5 + eps)
    return theta, m, v


def monte_carlo_kl(mu: np.ndarray, sigma: np.ndarray, n_samples: int, rng: np.random.Generator):
    """E_q[log q(z) - log p(z)] for diagonal Gaussians vs N(0, I).

    Returns (estimate, standard error); sampling is independent of the
    package's own RNG.
    """
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    eps = rng.standard_normal((n_samples, mu.size))
    z = mu[None, :] + sigma[None, :] * eps
    log_q = -0.5 * (eps ** 2 + np.log(2 * np.pi)) - np.log(sigma)[None, :]
    log_p = -0.5 * (z ** 2 + np.log(2 * np.pi))
    per_sample = (log_q - log_p).sum(axis=1)
    return float(per_sample.mean()), float(per_sample.std(ddof=1) / np.sqrt(n_samples))


def numeric_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g
