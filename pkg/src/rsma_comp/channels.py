"""Wyner-model Rayleigh channels for the two- and three-cell setups.

Every realization draws from its own generator seeded by ``(seed, index)``,
so a Monte Carlo draw does not depend on how many draws came before it or
which worker produced it.
"""

import csv
from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np

__all__ = [
    "ChannelState",
    "realization_rng",
    "sample_complex_gaussian",
    "wyner_two_cell",
    "wyner_three_cell",
    "draw",
    "write_channels_csv",
    "read_channels_csv",
    "TOPOLOGIES",
]

TOPOLOGIES = ("two-cell", "three-cell")


@dataclass(frozen=True, eq=False)
class ChannelState:
    H: np.ndarray            # (K, M); row k is h_k
    variances: np.ndarray    # (K, M)
    seed: Optional[int] = None
    index: Optional[int] = None

    @property
    def K(self):
        return self.H.shape[0]

    @property
    def M(self):
        return self.H.shape[1]

    def h(self, k):
        return self.H[k - 1]


def realization_rng(seed, index=0):
    """Independent generator for realization ``index`` of experiment ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index)])))


def sample_complex_gaussian(variance, rng, size=None):
    """CN(0, variance): real and imaginary parts each carry half the variance."""
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be nonnegative")
    shape = variance.shape if size is None else size
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    out = np.sqrt(variance / 2.0) * (re + 1j * im)
    if np.ndim(out) == 0:
        return complex(out)
    return out


def _check(alpha, beta):
    for name, v in (("alpha", alpha), ("beta", beta)):
        if not 0.0 < v <= 1.0:
            raise ValueError(f"{name} must lie in (0, 1], got {v}")


def two_cell_variances(alpha, beta):
    _check(alpha, beta)
    return np.array([[1.0, alpha], [alpha * beta, beta]])


def three_cell_variances(alpha, beta):
    _check(alpha, beta)
    ab = alpha * beta
    return np.array([[1.0, alpha, 0.0], [ab, beta, ab], [0.0, alpha, 1.0]])


def wyner_two_cell(alpha, beta, rng, seed=None, index=None):
    var = two_cell_variances(alpha, beta)
    return ChannelState(sample_complex_gaussian(var, rng), var, seed, index)


def wyner_three_cell(alpha, beta, rng, seed=None, index=None):
    var = three_cell_variances(alpha, beta)
    H = sample_complex_gaussian(var, rng)
    # structural zeros: users 1 and 3 hear nothing from the far cell
    H[var == 0] = 0.0
    return ChannelState(H, var, seed, index)


def draw(topology, alpha, beta, seed, index):
    rng = realization_rng(seed, index)
    if topology == "two-cell":
        return wyner_two_cell(alpha, beta, rng, seed, index)
    if topology == "three-cell":
        return wyner_three_cell(alpha, beta, rng, seed, index)
    raise ValueError(f"unknown topology {topology!r}; expected one of {TOPOLOGIES}")


def write_channels_csv(path_or_file, channels: Iterable[ChannelState]):
    """Columns: realization, user, bs, re, im (users and BSs 1-based)."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["realization", "user", "bs", "re", "im"])
        for i, ch in enumerate(channels):
            r = ch.index if ch.index is not None else i
            for k in range(ch.K):
                for m in range(ch.M):
                    v = ch.H[k, m]
                    w.writerow([r, k + 1, m + 1, repr(float(v.real)), repr(float(v.imag))])
    finally:
        if own:
            fh.close()


def read_channels_csv(path) -> List[ChannelState]:
    rows = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            r, k, m = int(rec["realization"]), int(rec["user"]), int(rec["bs"])
            rows.setdefault(r, {})[(k, m)] = complex(float(rec["re"]), float(rec["im"]))
    out = []
    for r in sorted(rows):
        entries = rows[r]
        K = max(k for k, _ in entries)
        M = max(m for _, m in entries)
        H = np.zeros((K, M), dtype=complex)
        for (k, m), v in entries.items():
            H[k - 1, m - 1] = v
        out.append(ChannelState(H, np.abs(H) ** 2, None, r))
    return out
