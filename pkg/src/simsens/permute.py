"""Achieved significance level of a candidate model by permutation of pooled clouds."""

from dataclasses import dataclass

import numpy as np

from ._validation import check_cloud, check_k, check_positive_int, check_probability
from .exceptions import InvalidArgumentError
from .knn import pooled_similarity, standardize_pooled

MODES = ("pooled", "internal")

# Mean distances are sums of fractions; compare with a little slack so that a
# permuted split equal to the observed statistic counts as ">=".
_TIE_EPS = 1e-12


@dataclass(frozen=True)
class PermutationConfig:
    n_perm: int = 1000
    mode: str = "pooled"

    def __post_init__(self):
        check_positive_int(self.n_perm, "n_perm")
        if self.mode not in MODES:
            raise InvalidArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class PermutationResult:
    statistic: float
    """Mean KNN distance between the observed cloud and the replicates."""
    asl: float
    distances: np.ndarray
    """Observed-vs-replicate distance, one per replicate."""
    null: np.ndarray
    """Distance of every permuted split, in draw order."""


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def permutation_test(observed, replicates, k=2, standardize=True, n_perm=1000,
                     mode="pooled", rng=None):
    """Mean observed-vs-replicate KNN distance and its achieved significance level.

    Draw ``i`` uses replicate ``i mod R``.  In ``pooled`` mode the observed cloud
    and that replicate are pooled and split at random into groups of the
    original sizes.  In ``internal`` mode the pool is replicate ``i mod R``
    together with replicate ``(i + 1) mod R`` (needs ``R >= 2``), split into
    groups of those two replicates' sizes.  The ASL is the fraction of draws
    whose split distance is at least the mean observed distance.
    """
    cfg = PermutationConfig(n_perm, mode)
    obs = check_cloud(observed, "observed")
    if len(replicates) == 0:
        raise InvalidArgumentError("at least one replicate is required")
    reps = [check_cloud(r, f"replicate[{i}]") for i, r in enumerate(replicates)]
    dim = obs.shape[1]
    for i, r in enumerate(reps):
        if r.shape[1] != dim:
            raise InvalidArgumentError(f"replicate[{i}] has dimension {r.shape[1]}, expected {dim}")
    check_k(k, len(obs), *(len(r) for r in reps))
    n_rep = len(reps)
    if cfg.mode == "internal" and n_rep < 2:
        raise InvalidArgumentError("internal mode needs at least two replicates")
    rng = _as_rng(rng)

    # Draw every permutation up front in draw order so that the result does
    # not depend on how the draws are grouped for evaluation below.
    pools = []
    for r in range(n_rep):
        if cfg.mode == "pooled":
            first, second = obs, reps[r]
        else:
            first, second = reps[r], reps[(r + 1) % n_rep]
        pools.append((first, second))
    perms = [rng.permutation(len(pools[i % n_rep][0]) + len(pools[i % n_rep][1]))
             for i in range(cfg.n_perm)]

    distances = np.empty(n_rep)
    null = np.empty(cfg.n_perm)
    for r in range(n_rep):
        draws = np.arange(r, cfg.n_perm, n_rep)
        first, second = pools[r]
        n1 = len(first)
        if standardize:
            first, second = standardize_pooled(first, second)
        pool = np.vstack([first, second])
        labels = np.zeros((len(draws) + 1, len(pool)), dtype=bool)
        # row 0 is the actual split (observed | replicate) in pooled mode
        labels[0, :n1] = True
        for row, i in enumerate(draws, start=1):
            labels[row, perms[i][:n1]] = True
        dist = 1.0 - pooled_similarity(pool, labels, k)
        null[draws] = dist[1:]
        if cfg.mode == "pooled":
            distances[r] = dist[0]
    if cfg.mode == "internal":
        distances = np.array([
            1.0 - pooled_similarity(*_pair(obs, rep, standardize), k)[0] for rep in reps
        ])
    statistic = float(distances.mean())
    asl = float(np.mean(null >= statistic - _TIE_EPS))
    return PermutationResult(statistic=statistic, asl=asl, distances=distances, null=null)


def _pair(a, b, standardize):
    if standardize:
        a, b = standardize_pooled(a, b)
    pool = np.vstack([a, b])
    labels = np.zeros((1, len(pool)), dtype=bool)
    labels[0, : len(a)] = True
    return pool, labels


def asl(observed, replicates, k=2, standardize=True, n_perm=1000, mode="pooled", rng=None):
    """Achieved significance level; see :func:`permutation_test`."""
    return permutation_test(observed, replicates, k=k, standardize=standardize,
                            n_perm=n_perm, mode=mode, rng=rng).asl


def plausible_set(cells, alpha):
    """Cells whose ASL exceeds ``alpha`` (strictly), in their original order."""
    alpha = check_probability(alpha, "alpha")
    return [c for c in cells if not c.failed and c.asl > alpha]
