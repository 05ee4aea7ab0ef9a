"""Array geometry, dictionaries, synthetic data and snapshot preprocessing.

Random numbers come from numpy's counter-based Philox bit generator. A trial
is addressed by a tuple of integers (for example ``(base_seed, sweep_index,
trial_index)``) which is fed to :class:`numpy.random.SeedSequence`; the
resulting stream depends only on that tuple, so trials can be generated in
any order or in parallel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidCorrelation, NotPSD, PlanError
from .numerics import hermitize, psd_sqrt

TWO_PI = 2.0 * np.pi


def make_rng(seed: int | Sequence[int]) -> np.random.Generator:
    """Philox generator for an integer seed or a tuple of integers."""
    entropy = [int(s) for s in np.atleast_1d(seed)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(*keys: int) -> int:
    """Deterministic 63-bit integer seed from a tuple of integers."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


def wrap_frequency(mu):
    """Map spatial frequencies into ``[-pi, pi)``."""
    return np.mod(np.asarray(mu, dtype=float) + np.pi, TWO_PI) - np.pi


@dataclass(frozen=True)
class ArrayGeometry:
    """Sensor positions of a linear array in half-wavelength units."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).ravel()
        if pos.size < 2:
            raise ValueError("an array needs at least two sensors")
        if not np.all(np.isfinite(pos)):
            raise ValueError("sensor positions must be finite")
        object.__setattr__(self, "positions", pos)

    @classmethod
    def ula(cls, M: int) -> "ArrayGeometry":
        return cls(np.arange(M, dtype=float))

    @property
    def M(self) -> int:
        return self.positions.size

    @property
    def is_ula(self) -> bool:
        return bool(np.array_equal(self.positions, np.arange(self.M, dtype=float)))

    def to_dict(self) -> dict:
        if self.is_ula:
            return {"sensors": self.M}
        return {"positions": self.positions.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ArrayGeometry":
        if "positions" in d:
            return cls(np.asarray(d["positions"], dtype=float))
        return cls.ula(int(d["sensors"]))


def steering_vector(geometry: ArrayGeometry, mu: float) -> np.ndarray:
    return np.exp(1j * mu * geometry.positions)


def steering_matrix(geometry: ArrayGeometry, mus) -> np.ndarray:
    """Columns ``a(mu_l)`` for each frequency in ``mus`` (M x L)."""
    mus = np.atleast_1d(np.asarray(mus, dtype=float))
    return np.exp(1j * np.outer(geometry.positions, mus))


def uniform_grid(K: int) -> np.ndarray:
    """``K`` frequencies ``-pi + 2 pi (k - 1) / K`` (half-open on ``[-pi, pi)``)."""
    if K < 2:
        raise ValueError("grid needs K >= 2")
    return -np.pi + TWO_PI * np.arange(K) / K


@dataclass(frozen=True)
class SteeringDictionary:
    geometry: ArrayGeometry
    grid: np.ndarray
    A: np.ndarray = field(repr=False)
    # memo for grams/subset tables keyed by consumers; never part of equality
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def build(cls, geometry: ArrayGeometry, grid) -> "SteeringDictionary":
        grid = np.asarray(grid, dtype=float).ravel()
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if grid[0] < -np.pi or grid[-1] >= np.pi:
            raise ValueError("grid must lie in [-pi, pi)")
        return cls(geometry, grid, steering_matrix(geometry, grid))

    @classmethod
    def ula(cls, M: int, K: int) -> "SteeringDictionary":
        return cls.build(ArrayGeometry.ula(M), uniform_grid(K))

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def K(self) -> int:
        return self.A.shape[1]

    @property
    def spacing(self) -> float:
        return TWO_PI / self.K

    def gram(self) -> np.ndarray:
        if "gram" not in self.cache:
            self.cache["gram"] = self.A.conj().T @ self.A
        return self.cache["gram"]


def correlated_covariance(phi: complex, variance=1.0) -> np.ndarray:
    """Three-source covariance with pairwise pattern ``[1, phi, phi; phi*, 1, phi^2; ...]``."""
    phi = complex(phi)
    C = np.array(
        [
            [1.0, phi, phi],
            [np.conj(phi), 1.0, phi**2],
            [np.conj(phi), np.conj(phi) ** 2, 1.0],
        ],
        dtype=complex,
    )
    g = np.sqrt(np.broadcast_to(np.asarray(variance, dtype=float), (3,)))
    return g[:, None] * C * g[None, :]


def snr_to_noise_variance(snr_db: float) -> float:
    return float(10.0 ** (-snr_db / 10.0))


@dataclass
class Scenario:
    """Sources, noise and sample size of one synthetic experiment.

    ``source_variance`` is a scalar or one value per source. ``correlation``
    selects the three-source correlated pattern; ``covariance`` overrides
    both with an explicit PSD source covariance.
    """

    frequencies: np.ndarray
    noise_variance: float
    snapshots: int
    source_variance: float | np.ndarray = 1.0
    correlation: complex | None = None
    covariance: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        self.frequencies = np.atleast_1d(np.asarray(self.frequencies, dtype=float))
        if len(np.unique(self.frequencies)) != self.frequencies.size:
            raise ValueError("source frequencies must be distinct")
        if not self.noise_variance > 0:
            raise ValueError("noise variance must be positive")
        if self.snapshots < 1:
            raise ValueError("need at least one snapshot")
        if self.correlation is not None and abs(self.correlation) > 1:
            raise InvalidCorrelation("|phi| must not exceed 1")

    @classmethod
    def from_snr(cls, frequencies, snr_db: float, snapshots: int, **kw) -> "Scenario":
        return cls(frequencies, snr_to_noise_variance(snr_db), snapshots, **kw)

    @property
    def L(self) -> int:
        return self.frequencies.size

    @property
    def snr_db(self) -> float:
        return float(-10.0 * np.log10(self.noise_variance))

    @property
    def variances(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.source_variance, dtype=float), (self.L,)).copy()

    def source_covariance(self) -> np.ndarray:
        if self.covariance is not None:
            P = np.asarray(self.covariance, dtype=complex)
            if P.shape != (self.L, self.L):
                raise InvalidCorrelation(f"covariance must be {self.L}x{self.L}")
            return P
        if self.correlation is not None:
            if self.L != 3:
                raise InvalidCorrelation("the correlated pattern is defined for 3 sources")
            return correlated_covariance(self.correlation, self.variances)
        return np.diag(self.variances).astype(complex)

    def to_dict(self) -> dict:
        d = {
            "frequencies": self.frequencies.tolist(),
            "noise_variance": self.noise_variance,
            "snapshots": int(self.snapshots),
            "source_variance": np.asarray(self.source_variance).tolist(),
            "seed": int(self.seed),
        }
        if self.correlation is not None:
            c = complex(self.correlation)
            d["correlation"] = [c.real, c.imag]
        if self.covariance is not None:
            P = np.asarray(self.covariance, dtype=complex)
            d["covariance"] = {"re": P.real.tolist(), "im": P.imag.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            if "frequencies" in d:
                freqs = np.asarray(d["frequencies"], dtype=float)
            else:
                freqs = np.pi * np.asarray(d["frequencies_over_pi"], dtype=float)
            if "noise_variance" in d:
                nv = float(d["noise_variance"])
            else:
                nv = snr_to_noise_variance(float(d["snr_db"]))
            corr = d.get("correlation")
            if isinstance(corr, (list, tuple)):
                corr = complex(corr[0], corr[1])
            elif corr is not None:
                corr = complex(corr)
            cov = d.get("covariance")
            if cov is not None:
                cov = np.asarray(cov["re"], dtype=float) + 1j * np.asarray(cov.get("im", 0.0))
            sv = d.get("source_variance", 1.0)
            sv = float(sv) if np.ndim(sv) == 0 else np.asarray(sv, dtype=float)
            return cls(
                freqs,
                nv,
                int(d["snapshots"]),
                source_variance=sv,
                correlation=corr,
                covariance=cov,
                seed=int(d.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidCorrelation):
                raise
            raise PlanError(f"bad scenario: {exc}") from None


SCENARIO_SCHEMA = """\
Scenario file (JSON object):
  frequencies         list of spatial frequencies in [-pi, pi)   (or)
  frequencies_over_pi list of frequencies divided by pi
  noise_variance      noise power sigma^2 > 0                    (or)
  snr_db              SNR in dB, sigma^2 = 10^(-snr_db/10)
  snapshots           number of snapshots N >= 1
  source_variance     scalar or per-source list (default 1)
  correlation         optional phi as number or [re, im] (3 sources only)
  covariance          optional {"re": [[...]], "im": [[...]]} source covariance
  seed                integer seed (default 0)
  sensors | positions optional array geometry (ULA size or explicit positions)
"""


def load_scenario(path) -> tuple[Scenario, ArrayGeometry]:
    d = json.loads(Path(path).read_text())
    geometry = ArrayGeometry.from_dict(d) if ("sensors" in d or "positions" in d) else ArrayGeometry.ula(8)
    return Scenario.from_dict(d), geometry


def save_scenario(path, scenario: Scenario, geometry: ArrayGeometry | None = None) -> None:
    d = scenario.to_dict()
    if geometry is not None:
        d.update(geometry.to_dict())
    Path(path).write_text(json.dumps(d, indent=2) + "\n")


@dataclass(frozen=True)
class SnapshotSet:
    """Measurements ``Y`` with sample covariance and its M x M compression."""

    Y: np.ndarray
    R: np.ndarray
    Yhat: np.ndarray

    @property
    def M(self) -> int:
        return self.Y.shape[0]

    @property
    def N(self) -> int:
        return self.Y.shape[1]


def preprocess(Y: np.ndarray) -> SnapshotSet:
    """Sample covariance ``R = Y Y^H / N`` and ``Yhat = sqrt(N) R^(1/2)``."""
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim == 1:
        Y = Y[:, None]
    N = Y.shape[1]
    if N < 1:
        raise ValueError("need at least one snapshot")
    R = hermitize(Y @ Y.conj().T) / N
    Yhat = np.sqrt(N) * psd_sqrt(R)
    return SnapshotSet(Y, R, Yhat)


def _covariance_factor(P: np.ndarray) -> np.ndarray:
    try:
        return psd_sqrt(hermitize(P))
    except NotPSD as exc:
        raise InvalidCorrelation(f"source covariance is not PSD ({exc})") from None


def generate_snapshots(
    scenario: Scenario,
    geometry: ArrayGeometry,
    rng: np.random.Generator | None = None,
) -> tuple[SnapshotSet, np.ndarray]:
    """Draw ``Y = A(mu) Psi + N`` for a scenario.

    Source waveforms are drawn first, then noise, both from the same stream.
    Without an explicit ``rng`` the scenario's seed is used.
    """
    if rng is None:
        rng = make_rng(scenario.seed)
    L, N, M = scenario.L, scenario.snapshots, geometry.M
    F = _covariance_factor(scenario.source_covariance())
    white = (rng.standard_normal((L, N)) + 1j * rng.standard_normal((L, N))) / np.sqrt(2.0)
    Psi = F @ white
    noise = np.sqrt(scenario.noise_variance / 2.0) * (
        rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))
    )
    Y = steering_matrix(geometry, scenario.frequencies) @ Psi + noise
    return preprocess(Y), Psi


def write_matrix_csv(path, Y: np.ndarray) -> None:
    """Complex matrix as CSV, one row per sensor, ``re,im`` column pairs per snapshot."""
    Y = np.atleast_2d(np.asarray(Y, dtype=complex))
    header = ",".join(f"re{n + 1},im{n + 1}" for n in range(Y.shape[1]))
    out = np.empty((Y.shape[0], 2 * Y.shape[1]))
    out[:, 0::2] = Y.real
    out[:, 1::2] = Y.imag
    np.savetxt(path, out, delimiter=",", header=header, comments="", fmt="%.17g")


def read_matrix_csv(path) -> np.ndarray:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if raw.shape[1] % 2:
        raise ValueError("snapshot CSV needs an even number of columns")
    return raw[:, 0::2] + 1j * raw[:, 1::2]
