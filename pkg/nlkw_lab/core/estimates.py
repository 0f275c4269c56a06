"""Monte Carlo estimates with standard errors"""

import math

import numpy as np

from nlkw_lab.core.entities import MCEstimate
from nlkw_lab.core.errors import ParameterError


def estimate(samples) -> MCEstimate:
    """Sample mean and standard error of i.i.d. samples"""
    values = np.asarray(samples, dtype=np.float64).ravel()
    n = int(values.size)
    if n == 0:
        raise ParameterError("cannot estimate from zero samples")
    mean = float(np.mean(values))
    if n == 1:
        return MCEstimate(mean=mean, stderr=math.inf, n=1)
    stderr = float(np.std(values, ddof=1) / math.sqrt(n))
    return MCEstimate(mean=mean, stderr=stderr, n=n)


def paired_difference(a, b) -> MCEstimate:
    """Estimate of E[a - b] from samples taken on the same paths.

    The standard error is the joint one: it accounts for the correlation
    between both estimates.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ParameterError(f"paired samples differ in size: {a.size} vs {b.size}")
    return estimate(a - b)


def sample_covariance(a, b) -> MCEstimate:
    """Estimate of Cov(a, b) via the samples (a - mean a)(b - mean b)"""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ParameterError(f"paired samples differ in size: {a.size} vs {b.size}")
    return estimate((a - a.mean()) * (b - b.mean()))
