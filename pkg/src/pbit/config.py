"""``key = value`` experiment files.

Keys are the :class:`ExperimentSpec` field names plus the scalar
:class:`SystemConfig` fields (``M``, ``N``, ``L``, ``beta``, ``rho``, ``P``,
``sigma_w2``). Lists are comma separated, ``#`` starts a comment, and
unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path
from typing import Union

from .harness import ExperimentSpec
from .model import SystemConfig

_CFG_KEYS = {"M": int, "N": int, "L": int, "beta": float, "rho": float, "P": float, "sigma_w2": float}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


_SPEC_KEYS = {
    "snr_grid_db": _floats,
    "rho_grid": _floats,
    "schemes": lambda t: tuple(s.strip() for s in t.split(",") if s.strip()),
    "phase_mode": str.strip,
    "trials": int,
    "master_seed": int,
    "output_path": str.strip,
    "rounding_trials": int,
    "bigamp_iters": int,
    "gamp_iters": int,
}

assert set(_SPEC_KEYS) == {f.name for f in fields(ExperimentSpec)} - {"cfg"}


def parse_config(text: str, source: str = "<config>") -> ExperimentSpec:
    cfg_kw: dict = {}
    spec_kw: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key in _CFG_KEYS:
                cfg_kw[key] = _CFG_KEYS[key](value)
            elif key in _SPEC_KEYS:
                spec_kw[key] = _SPEC_KEYS[key](value)
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
    cfg = SystemConfig(**cfg_kw)
    if "rho_grid" not in spec_kw:
        spec_kw["rho_grid"] = (cfg.rho,)
    return ExperimentSpec(cfg=cfg, **spec_kw)


def load_config(path: Union[str, Path]) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config(text, str(path))


def dump_config(spec: ExperimentSpec) -> str:
    cfg = spec.cfg
    lines = [f"{k} = {getattr(cfg, k)}" for k in _CFG_KEYS]
    for k in _SPEC_KEYS:
        v = getattr(spec, k)
        lines.append(f"{k} = {','.join(str(t) for t in v) if isinstance(v, tuple) else v}")
    return "\n".join(lines) + "\n"


def with_overrides(spec: ExperimentSpec, **changes) -> ExperimentSpec:
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(spec, **changes) if changes else spec
