"""von Mises-Fisher distributions on the unit sphere in R^n.

The density is f(z) = C_n(kappa) exp(kappa mu.z) with the normalizer
from :mod:`cebmv.bessel`.  Three facts carry the whole module:

* E_p[z] = A_n(kappa_p) mu_p, with A_n the Bessel ratio
  I_{n/2}/I_{n/2-1}; together with log-linearity of the density this
  gives the exact KL between two vMF distributions in closed form,

      KL(p || q) = (kappa_p mu_p - kappa_q mu_q) . A_n(kappa_p) mu_p
                   + log C_n(kappa_p) - log C_n(kappa_q).

* sampling reduces to a scalar rejection problem for the projection
  w = mu.z (Wood's envelope) plus a uniform tangent direction;

* the sampler factors through a fixed north-pole frame: only the final
  Householder rotation depends on mu, so holding the frame draw fixed
  makes z piecewise-smooth in mu and pathwise gradients exact (kappa is
  always a constant here, never a learned quantity).

Rejection bookkeeping tracks omega = 1 - w instead of w: for large
kappa, w hugs 1 and the envelope statistic suffers catastrophic
cancellation unless written in terms of omega.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from . import autodiff as ad
from .bessel import log_vmf_normalizer, mean_resultant_length

logger = logging.getLogger(__name__)

_MAX_REJECTION_ROUNDS = 1000
_UNIT_TOL = 1e-8
_UNIT_HARD_TOL = 1e-3


class VonMisesFisher:
    """A single vMF distribution: unit mean direction and concentration."""

    __slots__ = ("mu", "kappa", "n")

    def __init__(self, mu, kappa: float):
        mu = np.asarray(mu, dtype=np.float64)
        if mu.ndim != 1 or mu.shape[0] < 2:
            raise ValueError(f"mean direction must be a vector in R^n, n >= 2, got shape {mu.shape}")
        norm = float(np.linalg.norm(mu))
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"mean direction must be unit length, |mu| = {norm!r}")
        kappa = float(kappa)
        if not (kappa > 0.0 and math.isfinite(kappa)):
            raise ValueError(f"concentration must be positive and finite, got {kappa!r}")
        self.mu = mu
        self.kappa = kappa
        self.n = mu.shape[0]

    def __repr__(self):
        return f"VonMisesFisher(n={self.n}, kappa={self.kappa})"


def _check_unit_rows(z: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(z, axis=-1)
    drift = np.abs(norms - 1.0)
    worst = float(drift.max()) if drift.size else 0.0
    if worst > _UNIT_HARD_TOL:
        raise ValueError(f"{what} is not on the unit sphere (norm drift {worst:.3e})")
    if worst > _UNIT_TOL:
        logger.warning("%s drifted from unit norm by %.3e; renormalizing", what, worst)
        z = z / norms[..., None]
    return z


def log_prob(dist: VonMisesFisher, z) -> np.ndarray:
    """Log density at unit vectors ``z`` (shape [n] or [B, n]).

    Points drifted off the sphere by more than 1e-8 are renormalized
    with a logged warning; drift beyond 1e-3 is treated as a bug.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != dist.n:
        raise ValueError(f"z has dimension {z.shape[-1]}, distribution lives in R^{dist.n}")
    z = _check_unit_rows(z, "log_prob input")
    return dist.kappa * (z @ dist.mu) + log_vmf_normalizer(dist.n, dist.kappa)


def kl(p: VonMisesFisher, q: VonMisesFisher) -> float:
    """Exact KL(p || q) between two vMF distributions on the same sphere."""
    if p.n != q.n:
        raise ValueError(f"KL between different spheres: n={p.n} vs n={q.n}")
    a_p = mean_resultant_length(p.n, p.kappa)
    mean_p = a_p * p.mu
    cross = float((p.kappa * p.mu - q.kappa * q.mu) @ mean_p)
    return cross + log_vmf_normalizer(p.n, p.kappa) - log_vmf_normalizer(q.n, q.kappa)


def kl_equal_kappa(n: int, kappa: float, dot: float) -> float:
    """KL between two vMF with the same kappa whose means have inner
    product ``dot``; reduces to kappa A_n(kappa) (1 - dot)."""
    return kappa * mean_resultant_length(n, kappa) * (1.0 - float(dot))


# ---------------------------------------------------------------------------
# sampling


def _sample_projections(n: int, kappa: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` values of omega = 1 - mu.z by Wood's rejection
    scheme, vectorized over the still-rejected slots."""
    d = float(n)
    b = (d - 1.0) / (2.0 * kappa + math.sqrt(4.0 * kappa * kappa + (d - 1.0) ** 2))
    one_minus_x0 = 2.0 * b / (1.0 + b)  # 1 - x0, exact form, no cancellation
    x0 = (1.0 - b) / (1.0 + b)
    log_env = math.log(one_minus_x0) + math.log1p(x0)  # log(1 - x0^2)

    out = np.empty(count, dtype=np.float64)
    pending = np.arange(count)
    for _ in range(_MAX_REJECTION_ROUNDS):
        m = pending.size
        if m == 0:
            return out
        beta = rng.beta(0.5 * (d - 1.0), 0.5 * (d - 1.0), size=m)
        omega = 2.0 * b * beta / (1.0 - (1.0 - b) * beta)
        accept_stat = kappa * (one_minus_x0 - omega) \
            + (d - 1.0) * (np.log(one_minus_x0 + x0 * omega) - log_env)
        u = rng.uniform(size=m)
        ok = accept_stat >= np.log(u)
        out[pending[ok]] = omega[ok]
        pending = pending[~ok]
    raise RuntimeError(f"vMF rejection sampler exceeded {_MAX_REJECTION_ROUNDS} rounds "
                       f"(n={n}, kappa={kappa})")


def sample_northpole(n: int, kappa: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """[count, n] samples from vMF(e1, kappa): first coordinate is the
    projection w, the rest is a uniform tangent direction scaled to the
    sphere.  sqrt(1 - w^2) is computed as sqrt(omega (2 - omega)) to
    keep precision when w is within float eps of 1."""
    if n < 2:
        raise ValueError(f"sphere dimension n={n} must be >= 2")
    omega = _sample_projections(n, kappa, count, rng)
    tangent = rng.normal(size=(count, n - 1))
    norms = np.linalg.norm(tangent, axis=1, keepdims=True)
    # a zero draw from a continuous density has probability 0; guard anyway
    bad = norms[:, 0] < 1e-12
    if np.any(bad):
        tangent[bad] = 0.0
        tangent[bad, 0] = 1.0
        norms = np.linalg.norm(tangent, axis=1, keepdims=True)
    tangent /= norms
    z = np.empty((count, n), dtype=np.float64)
    z[:, 0] = 1.0 - omega
    z[:, 1:] = np.sqrt(omega * (2.0 - omega))[:, None] * tangent
    return z


def _householder_rotate(mu: np.ndarray, z_pole: np.ndarray) -> np.ndarray:
    a = -mu
    a = np.atleast_2d(a).copy()
    a[:, 0] += 1.0
    q = np.einsum("ij,ij->i", a, a)
    degenerate = np.sqrt(q) < 1e-9
    q[degenerate] = 1.0
    c = np.einsum("ij,ij->i", a, z_pole)
    out = z_pole - (2.0 * c / q)[:, None] * a
    out[degenerate] = z_pole[degenerate]
    return out


def sample(dist: VonMisesFisher, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
    """Draw samples; returns [n] for count=None, else [count, n]."""
    m = 1 if count is None else int(count)
    if m < 1:
        raise ValueError(f"sample count must be positive, got {count}")
    z_pole = sample_northpole(dist.n, dist.kappa, m, rng)
    z = _householder_rotate(np.broadcast_to(dist.mu, (m, dist.n)), z_pole)
    return z[0] if count is None else z


def sample_batch(mu_rows: ad.Tensor, kappa: float, rng: np.random.Generator) -> ad.Tensor:
    """Reparameterized batch draw for the training graph: one sample per
    row of ``mu_rows`` (unit rows, [B, n]).  The north-pole draw is a
    constant; only the Householder rotation touches ``mu_rows``, so
    gradients flow pathwise through the rotation."""
    b_sz, n = mu_rows.shape
    raw = sample_northpole(n, float(kappa), b_sz, rng)
    return ad.householder_apply(mu_rows, ad.constant(raw))


def log_prob_rows(z: ad.Tensor, mu_rows: ad.Tensor, n: int, kappa: float) -> ad.Tensor:
    """Row-wise graph log density log vMF(z; mu_i, kappa) -> [B]."""
    dots = ad.dot_rows(z, mu_rows)
    scaled = ad.scalar_multiply(dots, float(kappa))
    offset = log_vmf_normalizer(n, float(kappa))
    return ad.add(scaled, ad.constant(np.full(z.shape[0], offset)))
