"""Configuration file parsing and validation.

Runs are described by one TOML file with sections for the geometry, the
alphabet, the base distribution, the influence weights, the copy rows, the
walk, and per-experiment parameter tables. Offset-indexed maps use offset
strings as keys ("0", "-1", "0,1"); window-indexed maps use comma-joined
symbol labels. Every validation error names the section and key it came
from.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from envwalk.geometry import Geometry, GeometryError, sup_ball
from envwalk.kernel import EnvKernel, KernelError
from envwalk.walk import WalkModel, WalkModelError


class ConfigError(ValueError):
    """Raised with section/key context when a configuration is invalid."""


def _parse_offset(text: str, section: str) -> tuple[int, ...]:
    try:
        return tuple(int(part.strip()) for part in str(text).split(","))
    except ValueError as exc:
        raise ConfigError(f"[{section}] offset key {text!r} is not a comma-separated integer tuple") from exc


def _require(table: dict, key: str, section: str):
    if key not in table:
        raise ConfigError(f"[{section}] is missing required key {key!r}")
    return table[key]


@dataclass(frozen=True)
class RunSettings:
    seed: int = 1
    out: str = "runs/out"
    state_cap: int = 4096
    chunk: int = 512
    threads: int = 1
    burn_in: int = 64


@dataclass(frozen=True)
class RunConfig:
    """Parsed, validated run description."""

    path: str
    raw: dict
    sha256: str
    geometry: Geometry
    kernel: EnvKernel
    walk: WalkModel | None
    run: RunSettings
    condition_summary: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    def require_walk(self) -> WalkModel:
        if self.walk is None:
            raise ConfigError("[walk] section is required for this experiment")
        return self.walk


def _build_geometry(raw: dict) -> Geometry:
    geo = _require(raw, "geometry", "geometry")
    try:
        return Geometry(dim=int(_require(geo, "dim", "geometry")),
                        side=int(_require(geo, "side", "geometry")))
    except GeometryError as exc:
        raise ConfigError(f"[geometry] {exc}") from exc


def _build_kernel(raw: dict, geom: Geometry) -> EnvKernel:
    symbols = [str(s) for s in _require(_require(raw, "alphabet", "alphabet"),
                                        "symbols", "alphabet")]
    if len(symbols) != len(set(symbols)):
        raise ConfigError("[alphabet] symbols repeat")
    base = _require(_require(raw, "base", "base"), "probs", "base")
    influence = _require(raw, "influence", "influence")
    weight_table = _require(influence, "weights", "influence")
    offsets, weights = [], []
    for key, val in weight_table.items():
        off = _parse_offset(key, "influence.weights")
        if len(off) != geom.dim:
            raise ConfigError(f"[influence.weights] offset {key!r} has wrong dimension")
        offsets.append(off)
        weights.append(float(val))
    rows_table = _require(raw, "rows", "rows")
    rows = []
    for sym in symbols:
        if sym not in rows_table:
            raise ConfigError(f"[rows] is missing the row for symbol {sym!r}")
        rows.append([float(x) for x in rows_table[sym]])
    try:
        return EnvKernel(
            alphabet=tuple(symbols), base=base, offsets=tuple(offsets), weights=weights,
            rows=rows, decay_exponent=float(influence.get("decay_exponent", float("inf"))),
        )
    except KernelError as exc:
        raise ConfigError(f"[influence/base/rows] {exc}") from exc


def _build_walk(raw: dict, geom: Geometry, n_symbols: int, symbols: tuple) -> WalkModel | None:
    if "walk" not in raw:
        return None
    wsec = raw["walk"]
    step_range = int(_require(wsec, "range", "walk"))
    delta = float(_require(wsec, "delta", "walk"))
    offsets = sup_ball(step_range, geom.dim)
    base_table = _require(wsec, "base", "walk")
    base = [0.0] * len(offsets)
    for key, val in base_table.items():
        off = _parse_offset(key, "walk.base")
        if off not in offsets:
            raise ConfigError(f"[walk.base] offset {key!r} outside the step set")
        base[offsets.index(off)] = float(val)
    support_keys = wsec.get("support", [])
    support = tuple(_parse_offset(k, "walk.support") for k in support_keys)
    sym_index = {s: i for i, s in enumerate(symbols)}
    n_windows = n_symbols ** len(support)

    def window_code(key: str) -> int:
        parts = [p.strip() for p in key.split(",")]
        if len(parts) != len(support):
            raise ConfigError(f"[walk.perturbation] window {key!r} does not match the support size")
        code = 0
        for p in parts:
            if p not in sym_index:
                raise ConfigError(f"[walk.perturbation] unknown symbol {p!r} in window {key!r}")
            code = code * n_symbols + sym_index[p]
        return code

    pert = [[0.0] * n_windows for _ in offsets]
    for key, table in wsec.get("perturbation", {}).items():
        off = _parse_offset(key, "walk.perturbation")
        if off not in offsets:
            raise ConfigError(f"[walk.perturbation] offset {key!r} outside the step set")
        row = offsets.index(off)
        for wkey, val in table.items():
            pert[row][window_code(wkey)] = float(val)
    try:
        return WalkModel(dim=geom.dim, step_range=step_range, base=base, delta=delta,
                         perturbation_support=support, perturbation=pert,
                         n_symbols=n_symbols)
    except WalkModelError as exc:
        raise ConfigError(f"[walk] {exc}") from exc


def _build_run(raw: dict) -> RunSettings:
    rsec = raw.get("run", {})
    settings = RunSettings(
        seed=int(rsec.get("seed", 1)),
        out=str(rsec.get("out", "runs/out")),
        state_cap=int(rsec.get("state_cap", 4096)),
        chunk=int(rsec.get("chunk", 512)),
        threads=int(rsec.get("threads", 1)),
        burn_in=int(rsec.get("burn_in", 64)),
    )
    for name in ("state_cap", "chunk", "threads", "burn_in"):
        if getattr(settings, name) <= 0:
            raise ConfigError(f"[run] {name} must be positive")
    if not (0 <= settings.seed < 2**64):
        raise ConfigError("[run] seed must be a 64-bit value")
    return settings


def parse_config(path: str | Path) -> RunConfig:
    """Load and validate a run configuration.

    Structural invariants (stochasticity, positivity, probability bounds)
    are enforced at object construction; the uniqueness/ellipticity
    condition summary is evaluated here so any caller can print it.
    """
    path = Path(path)
    data = path.read_bytes()
    try:
        raw = tomli.loads(data.decode("utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    geom = _build_geometry(raw)
    kernel = _build_kernel(raw, geom)
    walk = _build_walk(raw, geom, kernel.n_symbols, kernel.alphabet)
    run = _build_run(raw)

    from envwalk.kernel import dobrushin_constants
    from envwalk.walk import check_ellipticity

    summary: dict = {"dobrushin": dobrushin_constants(kernel, walk).as_dict()}
    if walk is not None:
        ell = check_ellipticity(walk)
        summary["ellipticity"] = {"c": ell.c, "gamma": ell.gamma.tolist(),
                                  "gamma_floor": ell.gamma_floor, "span_ok": ell.span_ok}
    return RunConfig(path=str(path), raw=raw, sha256=hashlib.sha256(data).hexdigest(),
                     geometry=geom, kernel=kernel, walk=walk, run=run,
                     condition_summary=summary)
