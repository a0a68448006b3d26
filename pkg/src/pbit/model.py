"""System model for the LIS-assisted SIMO link.

Holds the configuration and channel containers, samplers for channels,
element states and QPSK symbols, the block synthesizer ``Y = z x^T + W``
and the binary-entropy helpers used to map a target LIS rate to an
on-probability.
"""

from __future__ import annotations

import dataclasses
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import brentq

UNIT_MODULUS_TOL = 1e-9


# ---------------------------------------------------------------------------
# Constellation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Constellation:
    """Ordered complex constellation with integer bit labels.

    ``labels[i]`` is the bit pattern (MSB first) carried by ``points[i]``.
    """

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=complex).ravel()
        labels = np.asarray(self.labels, dtype=int).ravel()
        if points.size == 0 or points.size & (points.size - 1):
            raise ValueError(f"constellation size must be a power of two, got {points.size}")
        if labels.shape != points.shape:
            raise ValueError("labels and points must have the same length")
        if sorted(labels.tolist()) != list(range(points.size)):
            raise ValueError("labels must be a permutation of 0..size-1")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def bits_per_symbol(self) -> int:
        return int(self.points.size).bit_length() - 1

    @property
    def average_power(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))

    def point_for_label(self, label: int) -> complex:
        return complex(self.points[np.flatnonzero(self.labels == label)[0]])

    def nearest_index(self, values) -> np.ndarray:
        """Index of the closest point for every entry (ties -> lowest index)."""
        values = np.asarray(values, dtype=complex)
        dist = np.abs(values[..., None] - self.points) ** 2
        return np.argmin(dist, axis=-1)

    def bits_from_indices(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=int).ravel()
        k = self.bits_per_symbol
        lab = self.labels[idx]
        shifts = np.arange(k - 1, -1, -1)
        return ((lab[:, None] >> shifts) & 1).astype(np.uint8).ravel()

    def indices_from_bits(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=int).ravel()
        k = self.bits_per_symbol
        if bits.size % k:
            raise ValueError(f"bit count {bits.size} is not a multiple of {k}")
        if np.any((bits != 0) & (bits != 1)):
            raise ValueError("bits must be 0 or 1")
        weights = 1 << np.arange(k - 1, -1, -1)
        lab = bits.reshape(-1, k) @ weights
        order = np.argsort(self.labels)
        return order[lab]


def qpsk_gray(P: float = 1.0) -> Constellation:
    """Gray-labelled QPSK with ``|c|^2 = P``.

    First bit selects the sign of the real part, second bit the imaginary
    part, so quadrant neighbours differ in exactly one bit.
    """
    a = np.sqrt(P / 2.0)
    labels = np.array([0b00, 0b01, 0b11, 0b10])
    points = np.array([a + 1j * a, a - 1j * a, -a - 1j * a, -a + 1j * a])
    return Constellation(points, labels)


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SystemConfig:
    """Scalar parameters of one PBIT link.

    ``sigma_w2 = 0`` is allowed for noiseless sanity runs.
    """

    M: int = 32
    N: int = 32
    L: int = 100
    beta: float = 0.5
    rho: float = 0.5
    P: float = 1.0
    sigma_w2: float = 1.0
    constellation: Optional[Constellation] = None

    def __post_init__(self):
        for name in ("M", "N", "L"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if not self.P > 0:
            raise ValueError(f"P must be positive, got {self.P}")
        if not self.sigma_w2 >= 0 or not np.isfinite(self.sigma_w2):
            raise ValueError(f"sigma_w2 must be finite and >= 0, got {self.sigma_w2}")
        const = self.constellation if self.constellation is not None else qpsk_gray(self.P)
        if not np.allclose(np.abs(const.points) ** 2, self.P, rtol=1e-9, atol=0):
            raise ValueError("every constellation point must satisfy |c|^2 = P")
        object.__setattr__(self, "constellation", const)

    @property
    def reference_symbol(self) -> complex:
        """Pilot in slot 1: the point labelled with all-zero bits."""
        return self.constellation.point_for_label(0)

    @property
    def snr_db(self) -> float:
        return float(10 * np.log10(1.0 / self.sigma_w2)) if self.sigma_w2 > 0 else np.inf

    @property
    def bits_per_block(self) -> int:
        return (self.L - 1) * self.constellation.bits_per_symbol

    def with_snr(self, snr_db: float) -> "SystemConfig":
        """Copy with ``sigma_w2 = 10^(-snr/10)``."""
        return dataclasses.replace(self, sigma_w2=float(10.0 ** (-snr_db / 10.0)))

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class ChannelState:
    G: np.ndarray
    h_r: np.ndarray
    h_d: np.ndarray
    A: Optional[np.ndarray] = None

    def __post_init__(self):
        G = np.asarray(self.G, dtype=complex)
        h_r = np.asarray(self.h_r, dtype=complex).ravel()
        h_d = np.asarray(self.h_d, dtype=complex).ravel()
        if G.ndim != 2 or G.shape != (h_d.size, h_r.size):
            raise ValueError(
                f"G must be M x N = {h_d.size} x {h_r.size}, got shape {G.shape}"
            )
        for name, arr in (("G", G), ("h_r", h_r), ("h_d", h_d)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h_r", h_r)
        object.__setattr__(self, "h_d", h_d)

    @property
    def M(self) -> int:
        return self.G.shape[0]

    @property
    def N(self) -> int:
        return self.G.shape[1]

    @property
    def D_h(self) -> np.ndarray:
        return np.diag(self.h_r)

    def cascade(self, beta: float = 1.0) -> np.ndarray:
        """``beta * G @ D_h`` without forming the diagonal matrix."""
        return beta * self.G * self.h_r[None, :]

    def with_phases(self, theta, beta: float) -> "ChannelState":
        """Return a copy with ``A = beta * G diag(theta) D_h`` filled in."""
        theta = check_unit_modulus(theta, self.N)
        return dataclasses.replace(self, A=self.cascade(beta) * theta[None, :])


@dataclass(frozen=True, eq=False)
class PhaseShifts:
    theta: np.ndarray
    t: complex = 1.0 + 0j

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=complex).ravel()
        check_unit_modulus(theta)
        if abs(abs(self.t) - 1.0) > UNIT_MODULUS_TOL:
            raise ValueError("auxiliary variable t must have unit modulus")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "t", complex(self.t))

    @property
    def theta_bar(self) -> np.ndarray:
        return np.append(self.theta, self.t)

    @property
    def angles(self) -> np.ndarray:
        return np.angle(self.theta)

    @classmethod
    def from_angles(cls, angles) -> "PhaseShifts":
        return cls(np.exp(1j * np.asarray(angles, dtype=float)))


@dataclass(frozen=True, eq=False)
class BlockSignals:
    s: np.ndarray
    x: np.ndarray
    Y: np.ndarray
    z: np.ndarray
    W: np.ndarray


def check_unit_modulus(theta, n: Optional[int] = None) -> np.ndarray:
    theta = np.asarray(theta, dtype=complex).ravel()
    if n is not None and theta.size != n:
        raise ValueError(f"expected {n} phase shifts, got {theta.size}")
    if theta.size and np.max(np.abs(np.abs(theta) - 1.0)) > UNIT_MODULUS_TOL:
        raise ValueError("phase shifts must have unit modulus")
    return theta


# ---------------------------------------------------------------------------
# Random streams and samplers
# ---------------------------------------------------------------------------


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``.

    Streams are addressed by key rather than by draw order, so trials can be
    run in any order or in parallel.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))


def crandn(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """CN(0, var) samples: variance ``var/2`` per real component."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def sample_channels(cfg: SystemConfig, rng: np.random.Generator) -> ChannelState:
    G = crandn(rng, (cfg.M, cfg.N))
    h_r = crandn(rng, cfg.N)
    h_d = crandn(rng, cfg.M)
    return ChannelState(G, h_r, h_d)


def sample_lis_state(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(cfg.N) < cfg.rho).astype(np.int8)


def random_phases(n: int, rng: np.random.Generator) -> PhaseShifts:
    return PhaseShifts.from_angles(rng.uniform(0.0, 2 * np.pi, n))


def random_bits(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, cfg.bits_per_block, dtype=np.uint8)


def modulate(bits, cfg: SystemConfig) -> np.ndarray:
    """Map ``(L-1) * log2|C|`` bits to a block whose slot 1 is the pilot."""
    bits = np.asarray(bits).ravel()
    if bits.size != cfg.bits_per_block:
        raise ValueError(
            f"expected {cfg.bits_per_block} bits for L={cfg.L}, got {bits.size}"
        )
    const = cfg.constellation
    idx = const.indices_from_bits(bits)
    return np.concatenate(([cfg.reference_symbol], const.points[idx]))


def symbols_to_bits(x, cfg: SystemConfig) -> np.ndarray:
    """Bits carried by the data slots (2..L) of a block of constellation points."""
    x = np.asarray(x, dtype=complex).ravel()
    const = cfg.constellation
    return const.bits_from_indices(const.nearest_index(x[1:]))


def simulate_block(
    ch: ChannelState,
    theta,
    s,
    x,
    cfg: SystemConfig,
    rng: np.random.Generator,
) -> BlockSignals:
    """Synthesize ``Y = (beta G Theta S h_r + h_d) x^T + W``."""
    if isinstance(theta, PhaseShifts):
        theta = theta.theta
    theta = check_unit_modulus(theta, ch.N)
    s = np.asarray(s).ravel()
    if s.size != ch.N or np.any((s != 0) & (s != 1)):
        raise ValueError("s must be a binary vector of length N")
    x = np.asarray(x, dtype=complex).ravel()
    if x.size != cfg.L:
        raise ValueError(f"x must have length L={cfg.L}, got {x.size}")
    A = ch.cascade(cfg.beta) * theta[None, :]
    z = A @ s.astype(float) + ch.h_d
    W = crandn(rng, (ch.M, cfg.L), cfg.sigma_w2)
    Y = np.outer(z, x) + W
    return BlockSignals(s=s.astype(np.int8), x=x, Y=Y, z=z, W=W)


# ---------------------------------------------------------------------------
# Entropy
# ---------------------------------------------------------------------------


def binary_entropy(rho) -> Union[float, np.ndarray]:
    """Base-2 binary entropy with ``0 log 0 = 0``."""
    p = np.asarray(rho, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("rho must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log2(p), 0.0) - np.where(p < 1, (1 - p) * np.log2(1 - p), 0.0)
    h = h + 0.0  # drop the sign of -0.0 at the endpoints
    return float(h) if h.ndim == 0 else h


def entropy_inverse(r: float) -> float:
    """On-probability in ``[0.5, 1]`` whose element entropy equals ``r`` bits."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {r}")
    if r >= 1.0:
        return 0.5
    if r <= 0.0:
        return 1.0
    return brentq(lambda p: binary_entropy(p) - r, 0.5, 1.0, xtol=1e-12, rtol=1e-15)


@dataclass(frozen=True)
class RateInfo:
    r: float
    rho: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "rho", entropy_inverse(self.r))


# ---------------------------------------------------------------------------
# Channel dump format
# ---------------------------------------------------------------------------

_BIN_MAGIC = b"PBCH"


def _interleave(a: np.ndarray) -> np.ndarray:
    flat = np.asarray(a, dtype=complex).ravel()  # row-major
    out = np.empty(2 * flat.size)
    out[0::2] = flat.real
    out[1::2] = flat.imag
    return out


def _deinterleave(v: np.ndarray, shape) -> np.ndarray:
    return (v[0::2] + 1j * v[1::2]).reshape(shape)


def dump_channels(ch: ChannelState, L: int, path: Union[str, Path], binary: bool = False) -> None:
    """Write ``G``, ``h_r``, ``h_d`` row-major with real/imag interleaved.

    Text layout: a header line ``M N L`` followed by one line per row of G,
    then one line for h_r and one for h_d. The binary layout is the magic
    ``PBCH``, three little-endian int64 (M, N, L) and float64 payload in the
    same order.
    """
    path = Path(path)
    if binary:
        payload = np.concatenate([_interleave(ch.G), _interleave(ch.h_r), _interleave(ch.h_d)])
        with path.open("wb") as fh:
            fh.write(_BIN_MAGIC + struct.pack("<3q", ch.M, ch.N, int(L)))
            fh.write(payload.astype("<f8").tobytes())
        return
    buf = io.StringIO()
    buf.write(f"{ch.M} {ch.N} {int(L)}\n")
    rows: Sequence[np.ndarray] = list(ch.G) + [ch.h_r, ch.h_d]
    for row in rows:
        buf.write(" ".join(f"{v:.17g}" for v in _interleave(row)) + "\n")
    path.write_text(buf.getvalue())


def load_channels(path: Union[str, Path]) -> tuple[ChannelState, int]:
    """Inverse of :func:`dump_channels`; format detected from the magic."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == _BIN_MAGIC:
        M, N, L = struct.unpack("<3q", raw[4:28])
        v = np.frombuffer(raw[28:], dtype="<f8")
        if v.size != 2 * (M * N + N + M):
            raise ValueError(f"{path}: payload size does not match header {M}x{N}")
        G = _deinterleave(v[: 2 * M * N], (M, N))
        h_r = _deinterleave(v[2 * M * N : 2 * (M * N + N)], N)
        h_d = _deinterleave(v[2 * (M * N + N) :], M)
        return ChannelState(G, h_r, h_d), int(L)
    lines = raw.decode().split("\n")
    try:
        M, N, L = (int(t) for t in lines[0].split())
        rows = [np.array(line.split(), dtype=float) for line in lines[1 : M + 3]]
    except ValueError as exc:
        raise ValueError(f"{path}: malformed channel dump ({exc})") from None
    if len(rows) != M + 2 or any(r.size != 2 * N for r in rows[: M + 1]) or rows[-1].size != 2 * M:
        raise ValueError(f"{path}: row layout does not match header {M}x{N}")
    G = np.vstack([_deinterleave(r, N) for r in rows[:M]])
    return ChannelState(G, _deinterleave(rows[M], N), _deinterleave(rows[M + 1], M)), L
