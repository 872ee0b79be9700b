"""Per-pixel uncertainty from a Monte Carlo set of prompt-conditioned predictions.

Every pixel is treated as a Bernoulli variable whose parameter is sampled
once per box prompt. Three maps are available:

* predictive entropy, the binary entropy of the mean probability;
* expected entropy, the mean of the per-sample binary entropies;
* variance, the population variance of the sampled probabilities.

Entropies are in bits, so both lie in [0, 1]; the variance lies in [0, 0.25].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fusion import PredictionSet, sample_mean

EPS = 1e-12
KINDS = ("predictive_entropy", "expected_entropy", "variance")
_ALIASES = {"predictive": "predictive_entropy", "expected": "expected_entropy", "var": "variance"}


@dataclass(frozen=True, eq=False)
class UncertaintyMap:
    values: np.ndarray
    kind: str

    @property
    def mean(self) -> float:
        """Spatial mean, used as the scalar summary of a map."""
        return float(np.mean(self.values))


def binary_entropy(p) -> np.ndarray:
    """Binary entropy in bits with ``0 log 0 = 0``.

    Interior probabilities are clamped to ``[EPS, 1 - EPS]`` before the logs.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.clip(p, EPS, 1.0 - EPS)
    h = -(q * np.log2(q) + (1.0 - q) * np.log2(1.0 - q))
    return np.where((p <= 0.0) | (p >= 1.0), 0.0, h)


def predictive_entropy(pset: PredictionSet) -> UncertaintyMap:
    p_bar = np.clip(sample_mean(pset.maps), 0.0, 1.0)
    return UncertaintyMap(binary_entropy(p_bar), "predictive_entropy")


def expected_entropy(pset: PredictionSet) -> UncertaintyMap:
    return UncertaintyMap(sample_mean(binary_entropy(m) for m in pset.maps), "expected_entropy")


def variance_map(pset: PredictionSet) -> UncertaintyMap:
    p_bar = sample_mean(pset.maps)
    var = sample_mean((np.asarray(m, dtype=np.float64) - p_bar) ** 2 for m in pset.maps)
    return UncertaintyMap(np.clip(var, 0.0, 0.25), "variance")


def uncertainty(pset: PredictionSet, kind: str) -> UncertaintyMap:
    kind = _ALIASES.get(kind, kind)
    if kind == "predictive_entropy":
        return predictive_entropy(pset)
    if kind == "expected_entropy":
        return expected_entropy(pset)
    if kind == "variance":
        return variance_map(pset)
    raise ValueError(f"unknown uncertainty kind {kind!r}; expected one of {KINDS}")


def all_maps(pset: PredictionSet) -> dict[str, UncertaintyMap]:
    return {k: uncertainty(pset, k) for k in KINDS}
