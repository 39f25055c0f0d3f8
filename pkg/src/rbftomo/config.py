"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, fields
from pathlib import Path

from rbftomo.grid import ImageGrid, ScanGeometry, default_n_det, make_grid, uniform_angles
from rbftomo.phantoms import Phantom, make_phantom
from rbftomo.shape import RbfDictionary, make_dictionary
from rbftomo.solver import Seed, SolverOptions


class ConfigError(ValueError):
    pass


_PI_EXPR = re.compile(r"^\s*([0-9.eE+-]*)\s*\*?\s*pi\s*(?:/\s*([0-9.eE+-]+))?\s*$")


def parse_radians(text: str) -> float:
    """Float, or a multiple of pi such as ``pi``, ``7pi/12``, ``2*pi/3``."""
    text = text.strip()
    m = _PI_EXPR.match(text)
    if m:
        num = float(m.group(1)) if m.group(1) not in ("", "+", "-") else float(m.group(1) + "1")
        den = float(m.group(2)) if m.group(2) else 1.0
        return num * math.pi / den
    return float(text)


def _angle_list(text: str) -> tuple[float, ...]:
    return tuple(parse_radians(t) for t in text.split(",") if t.strip())


def _disk_list(text: str) -> tuple[tuple[float, float, float], ...]:
    """``cx,cy,r; cx,cy,r; ...``"""
    out = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        parts = [float(v) for v in chunk.split(",")]
        if len(parts) != 3:
            raise ValueError(f"disk {chunk.strip()!r} needs cx,cy,r")
        out.append(tuple(parts))
    return tuple(out)


def _fmt_disks(disks) -> str:
    return "; ".join(",".join(repr(float(v)) for v in d) for d in disks)


# key -> (attribute, parser, formatter)
_KEYS = {
    "experiment": ("experiment", str, str),
    "grid.nx": ("nx", int, str),
    "grid.ny": ("ny", int, str),
    "grid.pixel_size": ("pixel_size", float, repr),
    "geometry.views": ("views", int, str),
    "geometry.range_start": ("range_start", parse_radians, repr),
    "geometry.range_end": ("range_end", parse_radians, repr),
    "geometry.angles": ("angles", _angle_list, lambda v: ", ".join(repr(a) for a in v)),
    "geometry.n_det": ("n_det", int, str),
    "geometry.det_spacing": ("det_spacing", float, repr),
    "dictionary.center_spacing": ("center_spacing", int, str),
    "dictionary.sigma": ("sigma", float, repr),
    "dictionary.beta": ("beta", float, repr),
    "heaviside.eps": ("eps", float, repr),
    "shape.u_in": ("u_in", float, repr),
    "shape.u_ex": ("u_ex", float, repr),
    "solver.max_iters": ("max_iters", int, str),
    "solver.grad_tol": ("grad_tol", float, repr),
    "solver.rel_obj_tol": ("rel_obj_tol", float, repr),
    "solver.lm_damping_init": ("lm_damping_init", float, repr),
    "solver.armijo_c": ("armijo_c", float, repr),
    "solver.shrink": ("shrink", float, repr),
    "solver.max_backtracks": ("max_backtracks", int, str),
    "solver.init": ("init", str, str),
    "phantom.kind": ("phantom_kind", str, str),
    "phantom.cx": ("phantom_cx", float, repr),
    "phantom.cy": ("phantom_cy", float, repr),
    "phantom.r": ("phantom_r", float, repr),
    "phantom.r_in": ("phantom_r_in", float, repr),
    "phantom.r_out": ("phantom_r_out", float, repr),
    "phantom.disks": ("phantom_disks", _disk_list, _fmt_disks),
    "phantom.carve": ("phantom_carve", _disk_list, _fmt_disks),
    "baseline.iterations": ("sirt_iterations", int, str),
    "baseline.relaxation": ("sirt_relaxation", float, repr),
    "noise_sigma": ("noise_sigma", float, repr),
    "seed": ("seed", int, str),
    "truth": ("truth", str, str),
    "sinogram": ("sinogram", str, str),
    "output_dir": ("output_dir", str, str),
}
_ATTR_TO_KEY = {attr: key for key, (attr, _, _) in _KEYS.items()}


@dataclass
class ExperimentConfig:
    experiment: str = "experiment"
    nx: int = 64
    ny: int = 64
    pixel_size: float = 1.0
    views: int = 4
    range_start: float = 0.0
    range_end: float = math.pi
    angles: tuple | None = None
    n_det: int | None = None
    det_spacing: float | None = None
    center_spacing: int = 8
    sigma: float | None = None
    beta: float | None = None
    eps: float = 0.5
    u_in: float = 1.0
    u_ex: float = 0.0
    max_iters: int = 200
    grad_tol: float | None = None
    rel_obj_tol: float = 1e-6
    lm_damping_init: float = 1e-3
    armijo_c: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 30
    init: str = "circle"
    phantom_kind: str = "two-disks"
    phantom_cx: float = 0.0
    phantom_cy: float = 0.0
    phantom_r: float | None = None
    phantom_r_in: float | None = None
    phantom_r_out: float | None = None
    phantom_disks: tuple | None = None
    phantom_carve: tuple | None = None
    sirt_iterations: int = 200
    sirt_relaxation: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0
    truth: str | None = None
    sinogram: str | None = None
    output_dir: str = "."

    # -- builders -----------------------------------------------------------
    def grid(self) -> ImageGrid:
        return make_grid(self.nx, self.ny, self.pixel_size)

    def angle_list(self) -> list[float]:
        if self.angles is not None:
            return list(self.angles)
        return uniform_angles(self.views, self.range_start, self.range_end)

    def geometry(self) -> ScanGeometry:
        grid = self.grid()
        n_det = self.n_det if self.n_det is not None else default_n_det(grid)
        spacing = self.det_spacing if self.det_spacing is not None else grid.pixel_size
        return ScanGeometry(tuple(self.angle_list()), n_det, spacing)

    def dictionary(self) -> RbfDictionary:
        return make_dictionary(self.grid(), self.center_spacing, self.sigma, self.beta)

    def seed_shape(self) -> Seed | None:
        kind, _, arg = self.init.partition(":")
        kind = kind.strip()
        if kind == "circle":
            return Seed("circle", float(arg)) if arg.strip() else None
        if kind == "constant":
            return Seed("constant", float(arg))
        if kind == "mask":
            from rbftomo.io import read_pgm

            return Seed("mask", read_pgm(arg.strip()) > 0.5)
        raise ValueError(f"unknown init kind {kind!r}")

    def solver_options(self) -> SolverOptions:
        return SolverOptions(
            max_iters=self.max_iters,
            grad_tol=self.grad_tol,
            rel_obj_tol=self.rel_obj_tol,
            lm_damping_init=self.lm_damping_init,
            armijo_c=self.armijo_c,
            shrink=self.shrink,
            max_backtracks=self.max_backtracks,
            init=self.seed_shape(),
        )

    def phantom(self) -> Phantom:
        params = {"name": self.experiment}
        kind = self.phantom_kind
        if kind == "disk":
            if self.phantom_r is None:
                raise ValueError("phantom.r is required for a disk")
            params.update(cx=self.phantom_cx, cy=self.phantom_cy, r=self.phantom_r)
        elif kind == "annulus":
            params.update(cx=self.phantom_cx, cy=self.phantom_cy, r_in=self.phantom_r_in, r_out=self.phantom_r_out)
        elif kind in ("two-disks", "blob-union"):
            params.update(disks=self.phantom_disks, carve=self.phantom_carve)
        return make_phantom(kind, self.grid(), **params)

    def angle_range(self) -> str:
        a = self.angle_list()
        if self.angles is not None:
            return f"{min(a):.6g}:{max(a):.6g}"
        return f"{self.range_start:.6g}:{self.range_end:.6g}"

    # -- validation and serialization --------------------------------------
    def validate(self) -> "ExperimentConfig":
        """Build every derived object once so errors surface before any work."""
        checks = [
            ("grid.nx", self.grid),
            ("geometry.views", self.geometry),
            ("dictionary.center_spacing", self.dictionary),
            ("solver.init", self.solver_options),
            ("phantom.kind", self.phantom),
        ]
        for key, build in checks:
            try:
                build()
            except (ValueError, TypeError, KeyError, OSError) as exc:
                raise ConfigError(f"{key}: {exc}") from None
        if not self.eps > 0:
            raise ConfigError("heaviside.eps: must be positive")
        if self.u_in == self.u_ex:
            raise ConfigError("shape.u_in: must differ from shape.u_ex")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma: must be >= 0")
        if self.sirt_iterations < 1 or not 0 < self.sirt_relaxation < 2:
            raise ConfigError("baseline.iterations must be >= 1 and baseline.relaxation in (0, 2)")
        return self

    def dumps(self) -> str:
        """Effective configuration, re-parseable by :func:`parse_config`."""
        resolved = {
            "n_det": self.geometry().n_det,
            "det_spacing": self.geometry().det_spacing,
            "sigma": self.dictionary().sigma,
        }
        lines = []
        for f in fields(self):
            value = resolved.get(f.name, getattr(self, f.name))
            if value is None:
                continue
            key = _ATTR_TO_KEY[f.name]
            if key in ("geometry.views", "geometry.range_start", "geometry.range_end") and self.angles is not None:
                continue
            lines.append(f"{key} = {_KEYS[key][2](value)}")
        return "\n".join(lines) + "\n"


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys fail."""
    values = {}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: {key!r} already set on line {seen[key]}")
        seen[key] = lineno
        attr, parser, _ = _KEYS[key]
        try:
            values[attr] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values).validate()


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, **overrides)


def shipped_configs() -> dict[str, Path]:
    """Experiment recipes bundled with the package, by name."""
    root = Path(__file__).parent / "configs"
    return {p.stem: p for p in sorted(root.glob("*.cfg"))}
