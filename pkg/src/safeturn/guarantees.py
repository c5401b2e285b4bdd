"""Chebyshev safety-bound calculus.

Pure functions relating a sigma-multiple safety margin to a failure
probability, with the measured variance of a trajectory split into a part the
agent controls and a part that is noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class BudgetError(ValueError):
    """A precondition of the bound calculus was violated."""


def chebyshev_tail(k: float, one_sided: bool = False) -> float:
    """Upper bound on P(max deviation >= k sigma), clamped to 1."""
    if k <= 0:
        raise BudgetError("k must be > 0")
    bound = 1.0 / (2.0 * k * k) if one_sided else 1.0 / (k * k)
    return min(1.0, bound)


def variance_decompose(sigma_M: float, sigma_c: float) -> tuple[float, float, float]:
    """Split a measured std into noise std and the two unit-norm fractions.

    Returns ``(sigma_n, alpha_c, alpha_n)``.
    """
    if sigma_M <= 0:
        raise BudgetError("sigma_M must be > 0")
    if sigma_c < 0:
        raise BudgetError("sigma_c must be >= 0")
    if sigma_c > sigma_M:
        raise BudgetError(f"control std {sigma_c} exceeds measured std {sigma_M}")
    sigma_n = math.sqrt(sigma_M * sigma_M - sigma_c * sigma_c)
    return sigma_n, sigma_c / sigma_M, sigma_n / sigma_M


def effective_noise_margin(k: float, kappa_c: float, alpha_c: float, alpha_n: float) -> float:
    """Safety margin in noise-sigma units once worst-case control is accounted for."""
    if alpha_n <= 0:
        raise BudgetError("alpha_n must be > 0: a purely controlled trajectory has no noise margin")
    if kappa_c * alpha_c >= k:
        raise BudgetError(
            f"control deviation kappa_c*alpha_c = {kappa_c * alpha_c:g} reaches the margin k = {k:g}")
    return (k + kappa_c * alpha_c) / alpha_n


def confidence_check(m: int, kappa_n: float | Sequence[float], delta: float) -> tuple[float, bool]:
    """Union bound over ``m`` agents; returns ``(bound, bound < delta)``.

    ``kappa_n`` may be a sequence of per-agent margins, in which case the bound
    is the sum of the one-sided tails and ``m`` must match its length.
    """
    if m < 1:
        raise BudgetError("m must be >= 1")
    if isinstance(kappa_n, (int, float)):
        if kappa_n <= 0:
            raise BudgetError("kappa_n must be > 0")
        bound = m / (2.0 * kappa_n * kappa_n)
    else:
        ks = [float(x) for x in kappa_n]
        if len(ks) != m:
            raise BudgetError(f"got {len(ks)} per-agent margins for m = {m}")
        if min(ks) <= 0:
            raise BudgetError("kappa_n must be > 0")
        bound = sum(1.0 / (2.0 * x * x) for x in ks)
    return bound, bound < delta


def empirical_tail_check(rollouts, means, sigmas, k: float, min_rollouts: int = 1000) -> float:
    """Fraction of rollouts that leave ``means +/- k*sigmas`` at any step.

    ``rollouts`` has shape (n, T); ``means`` and ``sigmas`` have shape (T,).
    An envelope object with ``means``/``sigmas`` attributes may be passed as
    ``means`` with ``sigmas=None``.
    """
    if sigmas is None:
        means, sigmas = means.means, means.sigmas
    x = np.asarray(rollouts, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < min_rollouts:
        raise BudgetError(f"need at least {min_rollouts} rollouts, got {len(x)}")
    dev = np.abs(x - np.asarray(means, dtype=float)) > k * np.asarray(sigmas, dtype=float)
    return float(dev.any(axis=1).mean())


@dataclass
class SafetyBudget:
    k: float
    kappa_c: float
    sigma_M: float
    sigma_c: float
    m: int
    delta: float
    sigma_n: float = 0.0
    alpha_c: float = 0.0
    alpha_n: float = 0.0
    kappa_n: float = 0.0
    bound: float = 0.0
    passes: bool = False

    @classmethod
    def evaluate(cls, sigma_M: float, sigma_c: float, k: float, kappa_c: float,
                 m: int, delta: float) -> "SafetyBudget":
        if not 0.0 < delta < 1.0:
            raise BudgetError("delta must lie strictly between 0 and 1")
        sigma_n, alpha_c, alpha_n = variance_decompose(sigma_M, sigma_c)
        kappa_n = effective_noise_margin(k, kappa_c, alpha_c, alpha_n)
        bound, ok = confidence_check(m, kappa_n, delta)
        return cls(k, kappa_c, sigma_M, sigma_c, m, delta, sigma_n, alpha_c, alpha_n,
                   kappa_n, bound, ok)

    def rows(self) -> list[tuple[str, str]]:
        return [
            ("sigma_M", f"{self.sigma_M:g}"),
            ("sigma_c", f"{self.sigma_c:g}"),
            ("sigma_n", f"{self.sigma_n:g}"),
            ("alpha_c", f"{self.alpha_c:g}"),
            ("alpha_n", f"{self.alpha_n:g}"),
            ("k", f"{self.k:g}"),
            ("kappa_c", f"{self.kappa_c:g}"),
            ("kappa_n", f"{self.kappa_n:.4f}"),
            ("m", str(self.m)),
            ("delta", f"{self.delta:g}"),
            ("bound", f"{self.bound:.6f}"),
            ("result", "pass" if self.passes else "fail"),
        ]

    def table(self) -> str:
        width = max(len(name) for name, _ in self.rows())
        return "\n".join(f"{name:<{width}}  {value}" for name, value in self.rows())


def admissible_pairs(kappa_n_for_k, ks: Sequence[float], ms: Sequence[int],
                     delta: float) -> list[tuple[int, float]]:
    """(m, k) combinations whose union bound stays below ``delta``."""
    out = []
    for m in ms:
        for k in ks:
            try:
                bound, ok = confidence_check(m, kappa_n_for_k(k), delta)
            except BudgetError:
                continue
            if ok:
                out.append((m, k))
    return out
