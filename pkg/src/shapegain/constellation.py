"""Bit-labeled constellations: QAM baselines, power moments, cluster detection.

Label convention used everywhere in this package: a constellation with
``m`` bits per symbol stores its points indexed by the unsigned integer
value of the bit label, and bit 0 of the label is the most significant
bit, i.e. label ``i`` carries bit ``k`` equal to ``(i >> (m - 1 - k)) & 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateInputError, ParameterError

CONSTELLATION_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Constellation:
    """M = 2**m complex points indexed by their m-bit label.

    Parameters
    ----------
    m : int
        Bits per symbol, m >= 1.
    points : ndarray of complex, shape (2**m,)
        points[i] is the symbol transmitted for label i (I + jQ, in
        normalized amplitude units).
    metadata : dict
        Free-form provenance record (generator name, training SNR, seed).
    """

    m: int
    points: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.m, (int, np.integer)) or self.m < 1:
            raise ParameterError(f"m must be an integer >= 1, got {self.m!r}")
        pts = np.asarray(self.points, dtype=np.complex128)
        if pts.shape != (2 ** self.m,):
            raise ParameterError(
                f"expected {2 ** self.m} points for m={self.m}, got shape {pts.shape}"
            )
        if not np.all(np.isfinite(pts.real)) or not np.all(np.isfinite(pts.imag)):
            raise ParameterError("constellation contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return 2 ** self.m

    def average_power(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))

    def bits(self) -> np.ndarray:
        """Bit table of shape (M, m); row i holds the bits of label i, MSB first."""
        return bit_table(self.m)


@dataclass(frozen=True)
class Moments:
    """Normalized power moments of a constellation.

    mu2 is the mean squared magnitude; mu4_hat and mu6_hat are the fourth
    and sixth moments normalized by mu2**2 and mu2**3 respectively, so a
    constant-modulus constellation has mu4_hat == mu6_hat == 1.
    """

    mu2: float
    mu4_hat: float
    mu6_hat: float

    def __post_init__(self):
        if not self.mu2 > 0:
            raise ParameterError(f"mu2 must be positive, got {self.mu2}")


@dataclass(frozen=True)
class MomCluster:
    """A group of labels whose points collapsed onto (nearly) one location.

    ambiguous_bit_positions are the label bit indices that vary across the
    member labels; shared_bit_positions is the complement in {0..m-1}.
    All index collections are sorted tuples.
    """

    member_labels: tuple
    centroid: complex
    ambiguous_bit_positions: tuple
    shared_bit_positions: tuple

    @property
    def size(self) -> int:
        return len(self.member_labels)


def bit_table(m: int) -> np.ndarray:
    """Return the (2**m, m) array of label bits, bit 0 = most significant."""
    labels = np.arange(2 ** m)
    shifts = np.arange(m - 1, -1, -1)
    return ((labels[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


def _gray_to_binary(g: np.ndarray) -> np.ndarray:
    b = g.copy()
    shift = 1
    while shift < 16:
        b ^= b >> shift
        shift <<= 1
    return b


def uniform_qam(m: int) -> Constellation:
    """Gray-labeled uniform QAM with unit average power.

    The first ceil(m/2) label bits select the I level and the remaining
    bits the Q level, each axis using a binary-reflected Gray code
    (level index descends from the largest positive amplitude).

    Even m yields square QAM where every nearest-neighbor pair differs in
    exactly one bit. Odd m >= 5 yields cross-QAM: the enclosing Gray-labeled
    rectangle is built first and the points of its outermost columns are
    remapped to the nearest vacant slot inside the cross silhouette
    (labels travel with their points, giving a quasi-Gray labeling).
    m == 3 keeps the 4x2 rectangle, which is already fully Gray; no
    symmetric square-minus-corners decomposition of 8 points exists.

    Parameters
    ----------
    m : int
        Bits per symbol, 1 <= m <= 10.

    Returns
    -------
    Constellation
    """
    if not isinstance(m, (int, np.integer)) or not 1 <= m <= 10:
        raise ParameterError(f"m must be an integer in [1, 10], got {m!r}")
    n_i = (m + 1) // 2
    n_q = m - n_i
    w, h = 2 ** n_i, 2 ** n_q

    labels = np.arange(2 ** m)
    g_i = labels >> n_q
    g_q = labels & (h - 1)
    # amplitude = (levels - 1) - 2 * level_index, level order follows the Gray sequence
    amp_i = (w - 1) - 2 * _gray_to_binary(g_i)
    amp_q = (h - 1) - 2 * _gray_to_binary(g_q) if n_q > 0 else np.zeros_like(labels)
    points = amp_i.astype(np.float64) + 1j * amp_q.astype(np.float64)

    if m % 2 == 1 and m >= 5:
        points = _fold_rectangle_into_cross(points, w)

    c = Constellation(int(m), points, metadata={"generator": "uniform_qam"})
    return normalize(c)


def _fold_rectangle_into_cross(points: np.ndarray, w: int) -> np.ndarray:
    """Remap the outermost rectangle columns into the cross silhouette.

    The cross is the odd-integer square of side s = 3w/4 minus four
    (w/8)x(w/8) corner blocks; its vacant slots (relative to the w x w/2
    rectangle) sit in the rows above and below the rectangle with
    |x| <= w/2 - 1. Each outlier point, visited in label order, moves to
    the nearest remaining vacant slot (ties broken by smallest (x, y)).
    """
    s = 3 * w // 4
    half_w = w // 2

    vacant = [
        complex(x, y_sign * y)
        for y in range(half_w + 1, s, 2)
        for y_sign in (1, -1)
        for x in range(-(half_w - 1), half_w, 2)
    ]
    out = points.copy()
    for i in np.flatnonzero(np.abs(points.real) > s - 1):
        dist = [abs(points[i] - v) for v in vacant]
        j = min(range(len(vacant)), key=lambda j: (dist[j], vacant[j].real, vacant[j].imag))
        out[i] = vacant.pop(j)
    return out


def normalize(c: Constellation) -> Constellation:
    """Scale all points by one common factor so the average power is 1."""
    power = c.average_power()
    if power <= 0.0:
        raise DegenerateInputError("cannot normalize an all-zero constellation")
    return Constellation(c.m, c.points / np.sqrt(power), dict(c.metadata))


def moments(c: Constellation) -> Moments:
    """Power moments (mu2, mu4/mu2^2, mu6/mu2^3) of a constellation."""
    p2 = np.abs(c.points) ** 2
    mu2 = float(np.mean(p2))
    if mu2 <= 0.0:
        raise DegenerateInputError("moments undefined for an all-zero constellation")
    mu4 = float(np.mean(p2 ** 2))
    mu6 = float(np.mean(p2 ** 3))
    return Moments(mu2=mu2, mu4_hat=mu4 / mu2 ** 2, mu6_hat=mu6 / mu2 ** 3)


def min_distance(c: Constellation) -> float:
    """Minimum pairwise Euclidean distance (0.0 for coincident points)."""
    d = np.abs(c.points[:, None] - c.points[None, :])
    iu = np.triu_indices(c.size, k=1)
    return float(d[iu].min())


def detect_mom_clusters(c: Constellation, epsilon: float = 0.01) -> list[MomCluster]:
    """Find groups of labels merged onto (virtually) the same point.

    Single-linkage clustering: labels are grouped by the transitive closure
    of the pairwise relation distance <= epsilon. Only clusters with at
    least two members are returned, sorted by size descending and then by
    smallest member label.

    Parameters
    ----------
    c : Constellation
    epsilon : float
        Merge threshold in the unit-power I/Q plane. The default (0.01) is
        about two orders of magnitude below typical minimum distances of
        unit-power 16-256 point constellations.
    """
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    dist = np.abs(c.points[:, None] - c.points[None, :])
    adjacency = csr_matrix(dist <= epsilon)
    n_comp, assignment = connected_components(adjacency, directed=False)

    clusters = []
    for comp in range(n_comp):
        members = np.flatnonzero(assignment == comp)
        if members.size < 2:
            continue
        and_bits = np.bitwise_and.reduce(members)
        or_bits = np.bitwise_or.reduce(members)
        varying = int(and_bits ^ or_bits)
        ambiguous = tuple(
            k for k in range(c.m) if (varying >> (c.m - 1 - k)) & 1
        )
        clusters.append(
            MomCluster(
                member_labels=tuple(int(i) for i in members),
                centroid=complex(np.mean(c.points[members])),
                ambiguous_bit_positions=ambiguous,
                shared_bit_positions=tuple(
                    k for k in range(c.m) if k not in ambiguous),
            )
        )
    clusters.sort(key=lambda cl: (-cl.size, min(cl.member_labels)))
    return clusters


def constellation_to_dict(c: Constellation) -> dict:
    meta = {"generator": None, "trained_snr_db": None, "seed": None}
    meta.update(c.metadata)
    return {
        "version": CONSTELLATION_FORMAT_VERSION,
        "m": c.m,
        "points": [[float(p.real), float(p.imag)] for p in c.points],
        "metadata": meta,
    }


def constellation_from_dict(doc: dict) -> Constellation:
    try:
        m = doc["m"]
        points = np.array([complex(re, im) for re, im in doc["points"]])
        metadata = dict(doc.get("metadata") or {})
    except (KeyError, TypeError) as exc:
        raise ParameterError(f"malformed constellation document: {exc}") from exc
    return Constellation(int(m), points, metadata)


def save_constellation(c: Constellation, path) -> None:
    """Write a constellation as JSON. Floats round-trip exactly (repr form)."""
    with open(path, "w") as fh:
        json.dump(constellation_to_dict(c), fh, indent=2)
        fh.write("\n")


def load_constellation(path) -> Constellation:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: not valid JSON: {exc}") from exc
    return constellation_from_dict(doc)
