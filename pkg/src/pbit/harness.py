"""Monte Carlo BER engine.

Every trial draws its own channels, phases, states, data and noise from
streams keyed by ``(master_seed, trial_index, purpose)``. Realizations are
shared across the SNR and rho grids of a trial (common random numbers), so
curves are smooth in SNR and runs are reproducible regardless of the order
or number of workers.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .beamforming import optimize_phases
from .factor import AmbiguityError, BigampPriors, correct_ambiguity, demap, factor_bigamp, factor_svd
from .model import (
    SystemConfig,
    crandn,
    make_rng,
    modulate,
    random_phases,
    sample_channels,
    symbols_to_bits,
)
from .sparse import (
    SparseObservation,
    cosamp_recover,
    form_observation,
    gamp_recover,
    lower_bound_x,
    omp_recover,
)

log = logging.getLogger(__name__)

X_SCHEMES = ("no-lis", "svd", "bigamp", "lb-x")
S_SCHEMES = ("svd+gamp", "bigamp+gamp", "bigamp+omp", "bigamp+cosamp", "lb-s")
ALL_SCHEMES = X_SCHEMES + S_SCHEMES
PHASE_MODES = ("random", "optimized")

# stream keys
_CHANNEL, _PHASE, _ROUNDING, _STATE, _DATA, _NOISE = range(6)


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    cfg: SystemConfig = field(default_factory=SystemConfig)
    snr_grid_db: tuple[float, ...] = (-20.0, -15.0, -10.0, -5.0, 0.0)
    rho_grid: tuple[float, ...] = (0.5,)
    schemes: tuple[str, ...] = ALL_SCHEMES
    phase_mode: str = "optimized"
    trials: int = 100
    master_seed: int = 0
    output_path: str = "ber.csv"
    rounding_trials: int = 100
    bigamp_iters: int = 200
    gamp_iters: int = 50

    def __post_init__(self):
        object.__setattr__(self, "snr_grid_db", tuple(float(v) for v in self.snr_grid_db))
        object.__setattr__(self, "rho_grid", tuple(float(v) for v in self.rho_grid))
        object.__setattr__(self, "schemes", tuple(self.schemes))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.snr_grid_db:
            raise ValueError("SNR grid is empty")
        if any(b <= a for a, b in zip(self.snr_grid_db, self.snr_grid_db[1:])):
            raise ValueError("SNR grid must be strictly increasing")
        if not self.rho_grid or any(not 0.0 <= r <= 1.0 for r in self.rho_grid):
            raise ValueError("rho grid must be non-empty with values in [0, 1]")
        if not self.schemes:
            raise ValueError("at least one scheme is required")
        unknown = set(self.schemes) - set(ALL_SCHEMES)
        if unknown:
            raise ValueError(f"unknown scheme(s): {', '.join(sorted(unknown))}")
        if self.phase_mode not in PHASE_MODES:
            raise ValueError(f"phase_mode must be one of {PHASE_MODES}, got {self.phase_mode!r}")


@dataclass
class Counts:
    errors_x: int = 0
    bits_x: int = 0
    errors_s: int = 0
    bits_s: int = 0
    erased: int = 0

    def __iadd__(self, other: "Counts") -> "Counts":
        self.errors_x += other.errors_x
        self.bits_x += other.bits_x
        self.errors_s += other.errors_s
        self.bits_s += other.bits_s
        self.erased += other.erased
        return self


@dataclass
class BerRecord:
    snr_db: float
    rho: float
    scheme: str
    phase_mode: str
    ber_x: Optional[float]
    ber_s: Optional[float]
    bit_count_x: int
    bit_count_s: int
    erased_blocks: int
    trials: int
    seed: int

    @property
    def errors_x(self) -> int:
        return int(round(self.ber_x * self.bit_count_x)) if self.ber_x is not None else 0

    @property
    def errors_s(self) -> int:
        return int(round(self.ber_s * self.bit_count_s)) if self.ber_s is not None else 0

    def wilson_x(self) -> float:
        return wilson_halfwidth(self.errors_x, self.bit_count_x)

    def wilson_s(self) -> float:
        return wilson_halfwidth(self.errors_s, self.bit_count_s)


CSV_FIELDS = [f.name for f in fields(BerRecord)]


def wilson_interval(errors: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    p = errors / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def wilson_halfwidth(errors: int, n: int, z: float = 1.96) -> float:
    lo, hi = wilson_interval(errors, n, z)
    return 0.5 * (hi - lo)


# ---------------------------------------------------------------------------
# One trial
# ---------------------------------------------------------------------------


def _needs(schemes: Sequence[str], *names: str) -> bool:
    return any(s in schemes for s in names)


def run_trial(spec: ExperimentSpec, trial_index: int) -> dict[tuple[float, float, str], Counts]:
    """Error counts of one realization for every (SNR, rho, scheme) of the spec."""
    base = spec.cfg
    seed = spec.master_seed
    ch = sample_channels(base, make_rng(seed, trial_index, _CHANNEL))
    bits = make_rng(seed, trial_index, _DATA).integers(0, 2, base.bits_per_block, dtype=np.uint8)
    x = modulate(bits, base)
    u_state = make_rng(seed, trial_index, _STATE).random(base.N)
    W_unit = crandn(make_rng(seed, trial_index, _NOISE), (base.M, base.L))
    random_theta = random_phases(base.N, make_rng(seed, trial_index, _PHASE)).theta

    out: dict[tuple[float, float, str], Counts] = {}
    for rho_idx, rho in enumerate(spec.rho_grid):
        cfg_rho = base.replace(rho=rho)
        if spec.phase_mode == "optimized":
            res = optimize_phases(ch, rho, base.beta, make_rng(seed, trial_index, _ROUNDING, rho_idx),
                                  trials=spec.rounding_trials)
            theta = res.theta
        else:
            theta = random_theta
        chA = ch.with_phases(theta, base.beta)
        s = (u_state < rho).astype(np.int8)
        z = chA.A @ s + ch.h_d
        signal = np.outer(z, x)
        direct = np.outer(ch.h_d, x)
        K = int(round(rho * base.N))

        for snr in spec.snr_grid_db:
            cfg = cfg_rho.with_snr(snr)
            noise = np.sqrt(cfg.sigma_w2) * W_unit
            Y = signal + noise
            counts = _evaluate(spec, cfg, chA, Y, direct + noise, x, bits, s, z, K)
            for scheme, c in counts.items():
                out[(snr, rho, scheme)] = c
    return out


def _x_counts(x_tilde, bits, cfg) -> Counts:
    err = int(np.count_nonzero(symbols_to_bits(x_tilde, cfg) != bits))
    return Counts(errors_x=err, bits_x=bits.size)


def _s_counts(s_hat, s) -> Counts:
    return Counts(errors_s=int(np.count_nonzero(s_hat != s)), bits_s=s.size)


def _evaluate(spec, cfg, chA, Y, Y_direct, x, bits, s, z, K) -> dict[str, Counts]:
    schemes = spec.schemes
    const = cfg.constellation
    out: dict[str, Counts] = {}
    n_bits, n_s = bits.size, s.size

    def erased_x():
        return Counts(errors_x=n_bits, bits_x=n_bits, erased=1)

    def erased_s():
        return Counts(errors_s=n_s, bits_s=n_s, erased=1)

    if "no-lis" in schemes:
        out["no-lis"] = _x_counts(lower_bound_x(Y_direct, chA.h_d, const), bits, cfg)
    if "lb-x" in schemes:
        out["lb-x"] = _x_counts(lower_bound_x(Y, z, const), bits, cfg)

    estimates: dict[str, Optional[np.ndarray]] = {}
    flagged: dict[str, int] = {}
    if _needs(schemes, "svd", "svd+gamp"):
        fr = factor_svd(Y)
        flagged["svd"] = 0
        try:
            _, xc, _ = correct_ambiguity(fr.z_hat, fr.x_hat, cfg.reference_symbol)
            estimates["svd"] = demap(xc, const)
        except AmbiguityError:
            estimates["svd"] = None
    if _needs(schemes, "bigamp", "bigamp+gamp", "bigamp+omp", "bigamp+cosamp"):
        priors = BigampPriors.from_model(chA, chA.A, cfg)
        fr = factor_bigamp(Y, priors, max_iter=spec.bigamp_iters)
        flagged["bigamp"] = int(fr.diverged)
        if fr.diverged:
            fr = factor_svd(Y)
        try:
            _, xc, _ = correct_ambiguity(fr.z_hat, fr.x_hat, cfg.reference_symbol)
            estimates["bigamp"] = demap(xc, const)
        except AmbiguityError:
            estimates["bigamp"] = None

    for name in ("svd", "bigamp"):
        if name in schemes:
            xt = estimates[name]
            out[name] = erased_x() if xt is None else _x_counts(xt, bits, cfg)
            out[name].erased += flagged[name] if xt is not None else 0

    observations: dict[str, Optional[SparseObservation]] = {}
    for name in ("svd", "bigamp"):
        if name in estimates:
            xt = estimates[name]
            observations[name] = None if xt is None else form_observation(Y, xt, cfg, chA)

    for scheme in S_SCHEMES:
        if scheme not in schemes:
            continue
        if scheme == "lb-s":
            obs = form_observation(Y, x, cfg, chA)
            out[scheme] = _s_counts(gamp_recover(obs, cfg.rho, max_iter=spec.gamp_iters).s_hat, s)
            continue
        front, back = scheme.split("+")
        obs = observations[front]
        if obs is None:
            out[scheme] = erased_s()
            continue
        if back == "gamp":
            est = gamp_recover(obs, cfg.rho, max_iter=spec.gamp_iters)
        elif back == "omp":
            est = omp_recover(obs, K)
        else:
            est = cosamp_recover(obs, K)
        out[scheme] = _s_counts(est.s_hat, s)
        out[scheme].erased += flagged.get(front, 0) + int(est.diverged)
    return out


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def _run_chunk(args) -> dict:
    spec, indices = args
    total: dict = defaultdict(Counts)
    for t in indices:
        for key, c in run_trial(spec, t).items():
            total[key] += c
    return dict(total)


def thread_count() -> int:
    env = os.environ.get("PBIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"PBIT_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def accumulate(spec: ExperimentSpec, workers: Optional[int] = None) -> dict:
    """Sum trial counts; the result does not depend on the worker count."""
    workers = thread_count() if workers is None else max(1, workers)
    indices = list(range(spec.trials))
    total: dict = defaultdict(Counts)
    if workers == 1 or spec.trials == 1:
        parts = [_run_chunk((spec, indices))]
    else:
        chunks = [indices[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, [(spec, c) for c in chunks if c]))
    for part in parts:
        for key, c in part.items():
            total[key] += c
    return dict(total)


def sweep(spec: ExperimentSpec, workers: Optional[int] = None, write: bool = True) -> list[BerRecord]:
    """Run the SNR x rho grid and (optionally) write the CSV to ``spec.output_path``."""
    totals = accumulate(spec, workers)
    records = []
    for rho in spec.rho_grid:
        for snr in spec.snr_grid_db:
            for scheme in spec.schemes:
                c = totals[(snr, rho, scheme)]
                records.append(BerRecord(
                    snr_db=snr,
                    rho=rho,
                    scheme=scheme,
                    phase_mode=spec.phase_mode,
                    ber_x=c.errors_x / c.bits_x if c.bits_x else None,
                    ber_s=c.errors_s / c.bits_s if c.bits_s else None,
                    bit_count_x=c.bits_x,
                    bit_count_s=c.bits_s,
                    erased_blocks=c.erased,
                    trials=spec.trials,
                    seed=spec.master_seed,
                ))
    if write:
        write_csv(records, spec.output_path)
    return records


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.8g}"
    return str(value)


def records_to_csv(records: Iterable[BerRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in records:
        writer.writerow([_fmt(getattr(r, name)) for name in CSV_FIELDS])
    return buf.getvalue()


def write_csv(records: Iterable[BerRecord], path) -> None:
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(records_to_csv(records))
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc.strerror or exc}") from exc


def read_csv(path) -> list[BerRecord]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read CSV {path}: {exc.strerror or exc}") from exc
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        if set(row) != set(CSV_FIELDS):
            raise ValueError(f"{path}: unexpected columns {sorted(row)}")
        out.append(BerRecord(
            snr_db=float(row["snr_db"]),
            rho=float(row["rho"]),
            scheme=row["scheme"],
            phase_mode=row["phase_mode"],
            ber_x=float(row["ber_x"]) if row["ber_x"] else None,
            ber_s=float(row["ber_s"]) if row["ber_s"] else None,
            bit_count_x=int(row["bit_count_x"]),
            bit_count_s=int(row["bit_count_s"]),
            erased_blocks=int(row["erased_blocks"]),
            trials=int(row["trials"]),
            seed=int(row["seed"]),
        ))
    return out


def snr_at_ber(snr_db: Sequence[float], ber: Sequence[float], target: float) -> float:
    """SNR where a BER curve first crosses ``target`` (linear in log10 BER).

    Returns ``nan`` if the curve never reaches the target, ``-inf`` if it is
    already below it at the first grid point.
    """
    snr = np.asarray(snr_db, dtype=float)
    b = np.asarray(ber, dtype=float)
    if b[0] <= target:
        return -np.inf
    for i in range(1, len(b)):
        if b[i] <= target:
            lo, hi = b[i - 1], b[i]
            if hi <= 0:
                # zero errors at this point: interpolate toward a floor one decade down
                hi = target / 10
            f = (np.log10(lo) - np.log10(target)) / (np.log10(lo) - np.log10(hi))
            return float(snr[i - 1] + f * (snr[i] - snr[i - 1]))
    return float("nan")


def curve(records: Sequence[BerRecord], scheme: str, rho: Optional[float] = None, which: str = "x"):
    """``(snr, ber, halfwidth)`` arrays of one scheme, sorted by SNR."""
    rows = [r for r in records if r.scheme == scheme and (rho is None or r.rho == rho)]
    rows.sort(key=lambda r: r.snr_db)
    snr = np.array([r.snr_db for r in rows])
    if which == "x":
        ber = np.array([r.ber_x for r in rows], dtype=float)
        hw = np.array([r.wilson_x() for r in rows])
    else:
        ber = np.array([r.ber_s for r in rows], dtype=float)
        hw = np.array([r.wilson_s() for r in rows])
    return snr, ber, hw


PLOT_TEMPLATE = '''"""Plot BER curves from {csv_name}. Generated by `pbit emit-plots`."""
import csv
import math
import sys
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

CSV = sys.argv[1] if len(sys.argv) > 1 else {csv_path!r}
OUT = sys.argv[2] if len(sys.argv) > 2 else {png_path!r}


def wilson(errors, n, z=1.96):
    if n == 0:
        return 0.0
    p = errors / n
    d = 1 + z * z / n
    return z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / d


curves = defaultdict(list)
with open(CSV) as fh:
    for row in csv.DictReader(fh):
        for sig in ("x", "s"):
            ber = row["ber_" + sig]
            if not ber:
                continue
            n = int(row["bit_count_" + sig])
            label = "%s %s rho=%s (%s)" % (sig, row["scheme"], row["rho"], row["phase_mode"])
            curves[(sig, label)].append((float(row["snr_db"]), float(ber), wilson(round(float(ber) * n), n)))

fig, axes = plt.subplots(1, 2, figsize=(12, 5))
for (sig, label), pts in sorted(curves.items()):
    pts.sort()
    ax = axes[0 if sig == "x" else 1]
    ax.errorbar([p[0] for p in pts], [max(p[1], 1e-7) for p in pts], yerr=[p[2] for p in pts],
                marker="o", ms=3, capsize=2, label=label)
for ax, title in zip(axes, ("BER of x", "BER of s")):
    ax.set_yscale("log")
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("BER")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=6)
fig.tight_layout()
fig.savefig(OUT, dpi=150)
print("wrote", OUT)
'''


def plot_script(csv_path: str, png_path: Optional[str] = None) -> str:
    csv_path = str(csv_path)
    png_path = png_path or str(Path(csv_path).with_suffix(".png"))
    return PLOT_TEMPLATE.format(csv_name=Path(csv_path).name, csv_path=csv_path, png_path=png_path)
