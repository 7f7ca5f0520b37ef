"""Overlapping Allan deviation with mergeable accumulators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2


@dataclass(frozen=True)
class AllanSeries:
    """Overlapping Allan deviation versus averaging time.

    ``ci_low``/``ci_high`` bound a chi-squared confidence interval computed with
    the white-FM equivalent degrees of freedom.
    """

    taus: np.ndarray
    adev: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    edf: np.ndarray
    n_terms: np.ndarray

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.ci_high - self.ci_low)

    def at(self, tau: float) -> float:
        idx = int(np.argmin(np.abs(self.taus - tau)))
        if not math.isclose(self.taus[idx], tau, rel_tol=1e-9):
            raise KeyError(f"no averaging time {tau}")
        return float(self.adev[idx])

    def rows(self):
        for row in zip(self.taus, self.adev, self.ci_low, self.ci_high, self.edf):
            yield tuple(float(v) for v in row)


def white_fm_edf(n_phase: int, m: int) -> float:
    """Equivalent degrees of freedom of the overlapping estimator (white FM).

    ``n_phase`` counts phase points (frequency samples plus one).
    """
    big = n_phase
    edf = (3.0 * (big - 1) / (2.0 * m) - 2.0 * (big - 2) / big) * 4.0 * m * m / (4.0 * m * m + 5.0)
    return max(edf, 1.0)


def octave_factors(n_samples: int) -> list[int]:
    out = []
    m = 1
    while 2 * m <= n_samples:
        out.append(m)
        m *= 2
    return out


class AllanAccumulator:
    """Sums of squared second differences per averaging factor ``m``.

    Accumulators built from independent records with the same ``tau0`` merge
    associatively; the merged deviation pools all second differences.
    """

    def __init__(self, tau0: float, factors):
        if tau0 <= 0:
            raise ValueError("tau0 must be positive")
        self.tau0 = float(tau0)
        self.factors = tuple(int(m) for m in factors)
        if any(m < 1 for m in self.factors) or list(self.factors) != sorted(set(self.factors)):
            raise ValueError("averaging factors must be distinct, positive and increasing")
        self.sums = np.zeros(len(self.factors))
        self.counts = np.zeros(len(self.factors), dtype=np.int64)
        self.edf = np.zeros(len(self.factors))

    def add(self, y) -> "AllanAccumulator":
        y = np.asarray(y, dtype=float)
        if y.ndim != 1:
            raise ValueError("expected a 1-d frequency series")
        if len(y) < 2 * self.factors[-1]:
            raise ValueError(f"need at least {2 * self.factors[-1]} samples for the largest averaging factor")
        x = np.concatenate(([0.0], np.cumsum(y))) * self.tau0
        for i, m in enumerate(self.factors):
            d = x[2 * m :] - 2.0 * x[m:-m] + x[: -2 * m]
            self.sums[i] += float(np.dot(d, d))
            self.counts[i] += len(d)
            self.edf[i] += white_fm_edf(len(x), m)
        return self

    def merge(self, other: "AllanAccumulator") -> "AllanAccumulator":
        if other.tau0 != self.tau0 or other.factors != self.factors:
            raise ValueError("cannot merge accumulators with different tau0 or factors")
        out = AllanAccumulator(self.tau0, self.factors)
        out.sums = self.sums + other.sums
        out.counts = self.counts + other.counts
        out.edf = self.edf + other.edf
        return out

    def series(self, confidence: float = 0.683) -> AllanSeries:
        if np.any(self.counts == 0):
            raise ValueError("accumulator is empty")
        m = np.array(self.factors, dtype=float)
        avar = self.sums / (2.0 * m * m * self.tau0**2 * self.counts)
        adev = np.sqrt(avar)
        alpha = 1.0 - confidence
        hi_q = chi2.ppf(1.0 - alpha / 2.0, self.edf)
        lo_q = chi2.ppf(alpha / 2.0, self.edf)
        return AllanSeries(
            taus=m * self.tau0,
            adev=adev,
            ci_low=np.sqrt(avar * self.edf / hi_q),
            ci_high=np.sqrt(avar * self.edf / lo_q),
            edf=self.edf.copy(),
            n_terms=self.counts.copy(),
        )


def allan_deviation(samples, tau0: float, taus=None, confidence: float = 0.683) -> AllanSeries:
    """Overlapping Allan deviation of fractional-frequency ``samples``.

    Parameters
    ----------
    samples : array_like
        Frequency averages over consecutive intervals ``tau0``.
    taus : sequence of float, optional
        Averaging times; each must be an integer multiple of ``tau0`` with at
        least two such intervals in the record.  Defaults to octave spacing.
    """
    y = np.asarray(samples, dtype=float)
    if len(y) < 2:
        raise ValueError("need at least two samples")
    if taus is None:
        factors = octave_factors(len(y))
    else:
        factors = []
        for t in taus:
            m = int(round(t / tau0))
            if m < 1 or not math.isclose(m * tau0, t, rel_tol=1e-9):
                raise ValueError(f"tau {t} is not a positive multiple of tau0 {tau0}")
            factors.append(m)
        factors = sorted(set(factors))
        if 2 * factors[-1] > len(y):
            raise ValueError("insufficient data: need at least two samples per averaging time")
    return AllanAccumulator(tau0, factors).add(y).series(confidence)
