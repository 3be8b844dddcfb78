"""K-nearest-neighbour similarity and distance between two point clouds.

For clouds ``D`` and ``D*`` every point carries its own k-th nearest-neighbour
radius computed within its cloud.  A point of one cloud is *covered* when it
lies strictly inside the radius of at least one point of the other cloud.  The
similarity is the average of the two covered fractions and the KNN distance is
one minus the similarity.

All routines work on a pooled array plus a boolean labelling, which lets the
permutation test reuse a single pooled distance matrix for many splits.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ._validation import check_cloud, check_k
from .exceptions import InvalidArgumentError

# Upper bound on B * N * N elements materialised per batch in the general path.
_BATCH_ELEMENTS = 8_000_000


@dataclass(frozen=True)
class KnnConfig:
    """Neighbour order and whether to z-score the pooled clouds first."""

    k: int = 2
    standardize: bool = True

    def __post_init__(self):
        check_k(self.k)


def standardize_pooled(*clouds):
    """Z-score every coordinate with the mean/sd of the union of ``clouds``.

    Constant coordinates are centred but not rescaled.
    """
    pool = np.vstack(clouds)
    mean = pool.mean(axis=0)
    sd = pool.std(axis=0)
    sd[sd == 0] = 1.0
    return [(c - mean) / sd for c in clouds]


def kth_nn_radius(cloud, k):
    """Distance from each point to its k-th closest *other* point in ``cloud``.

    Examples
    --------
    >>> kth_nn_radius([0.0, 1.0, 3.0], 1).tolist()
    [1.0, 1.0, 2.0]
    """
    x = check_cloud(cloud)
    check_k(k, len(x))
    d = cdist(x, x)
    np.fill_diagonal(d, np.inf)
    return np.partition(d, k - 1, axis=1)[:, k - 1]


def _prepare_pair(d, d_star, k, standardize):
    a = check_cloud(d, "d")
    b = check_cloud(d_star, "d_star")
    if a.shape[1] != b.shape[1]:
        raise InvalidArgumentError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    k = check_k(k, len(a), len(b))
    if standardize:
        a, b = standardize_pooled(a, b)
    return a, b, k


def similarity(d, d_star, k=2, standardize=False):
    """Mutual KNN coverage similarity in ``[0, 1]``.

    Parameters
    ----------
    d, d_star : array-like of shape (n, dim) and (m, dim)
        The two clouds.  1-D input is read as points on the line.
    k : int
        Neighbour order, ``1 <= k < min(n, m)``.
    standardize : bool
        Z-score coordinates over the union of both clouds before measuring.
    """
    a, b, k = _prepare_pair(d, d_star, k, standardize)
    pool = np.vstack([a, b])
    labels = np.zeros((1, len(pool)), dtype=bool)
    labels[0, : len(a)] = True
    return float(pooled_similarity(pool, labels, k)[0])


def knn_distance(d, d_star, k=2, standardize=False):
    """``1 - similarity(d, d_star)``; symmetric in its arguments."""
    return 1.0 - similarity(d, d_star, k=k, standardize=standardize)


def pooled_similarity(pool, labels, k):
    """Similarities for a batch of two-group labellings of one pooled cloud.

    Parameters
    ----------
    pool : ndarray of shape (N, dim)
    labels : bool ndarray of shape (B, N)
        ``True`` marks membership of the first cloud.  Every row must put at
        least ``k + 1`` points in each group.
    k : int

    Returns
    -------
    ndarray of shape (B,)
    """
    labels = np.atleast_2d(np.asarray(labels, dtype=bool))
    if pool.shape[1] == 1:
        return _similarity_1d(pool[:, 0], labels, k)
    return _similarity_general(pool, labels, k)


def _covered_fractions(covered, labels):
    n_first = labels.sum(axis=1)
    n_second = labels.shape[1] - n_first
    # points of the first cloud covered by the second's radii, and vice versa
    first = (covered & labels).sum(axis=1) / n_first
    second = (covered & ~labels).sum(axis=1) / n_second
    return 0.5 * (first + second)


def _similarity_general(pool, labels, k):
    n = len(pool)
    dist = cdist(pool, pool)
    diag = np.arange(n)
    out = np.empty(len(labels))
    step = max(1, _BATCH_ELEMENTS // (n * n))
    for start in range(0, len(labels), step):
        lab = labels[start : start + step]
        same = lab[:, :, None] == lab[:, None, :]
        within = np.where(same, dist, np.inf)
        within[:, diag, diag] = np.inf
        radius = np.partition(within, k - 1, axis=2)[:, :, k - 1]
        # covered[b, j]: some point i of the other group has d(i, j) < radius_i
        covered = (~same & (dist[None] < radius[:, :, None])).any(axis=1)
        out[start : start + step] = _covered_fractions(covered, lab)
    return out


def _group_radius_1d(values, k):
    # values: (B, n) sorted along axis 1; the k nearest neighbours of a point
    # on the line lie within k positions on either side.
    b, n = values.shape
    cand = np.full((b, n, 2 * k), np.inf)
    for o in range(1, k + 1):
        cand[:, o:, o - 1] = values[:, o:] - values[:, :-o]
        cand[:, :-o, k + o - 1] = values[:, o:] - values[:, :-o]
    return np.partition(cand, k - 1, axis=2)[:, :, k - 1]


def _covered_by_1d(xs, centre_mask, radius_full):
    # Is each position within the open interval (x_i - r_i, x_i + r_i) of some
    # centre i?  Centres at or left of a position can only reach it from the
    # left; cumulative extrema over the sorted order answer both sides at once.
    right = np.where(centre_mask, xs + radius_full, -np.inf)
    left = np.where(centre_mask, xs - radius_full, np.inf)
    reach_right = np.maximum.accumulate(right, axis=1)
    reach_left = np.minimum.accumulate(left[:, ::-1], axis=1)[:, ::-1]
    # x_i - r_i < x_j and |x_i - x_j| < r_i round differently at the boundary,
    # so decide entries within a few ulps by the exact distance comparison.
    tol = 8 * np.finfo(float).eps * (np.abs(xs).max() + np.max(radius_full, initial=0.0))
    sure = (reach_right > xs + tol) | (reach_left < xs - tol)
    maybe = (reach_right > xs - tol) | (reach_left < xs + tol)
    bs, js = np.nonzero(maybe & ~sure)
    for lo in range(0, len(bs), 4096):
        b, j = bs[lo : lo + 4096], js[lo : lo + 4096]
        near = np.abs(xs[None, :] - xs[j, None]) < radius_full[b]
        sure[b, j] = (near & centre_mask[b]).any(axis=1)
    return sure


def _similarity_1d(x, labels, k):
    order = np.argsort(x, kind="stable")
    xs = x[order]
    lab = labels[:, order]
    b, n = lab.shape
    tiled = np.broadcast_to(xs, (b, n))
    radius = np.empty((b, n))
    for mask in (lab, ~lab):
        vals = tiled[mask].reshape(b, -1)
        radius[mask] = _group_radius_1d(vals, k).ravel()
    covered = np.where(
        lab,
        _covered_by_1d(xs, ~lab, radius),
        _covered_by_1d(xs, lab, radius),
    )
    return _covered_fractions(covered, lab)
