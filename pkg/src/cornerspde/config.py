"""Run configuration: INI-style text with sections, validated into a RunConfig."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import PolygonalDomain, build_domain
from .noise import VARIANTS, CoefficientModel, CovarianceSpec

L_SHAPE_VERTICES = "0 -1, 1 -1, 1 1, -1 1, -1 0, 0 0"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class RunConfig:
    vertices: list
    cutoff_r0: float | None = None
    cutoff_r1: float | None = None
    h: float = 0.02
    beta: float | None = None
    modes: int = 100
    variant: str = "additive"
    q0: float = 1.0
    decay: float = 2.2
    noise_modes: int = 100
    drift_scale: float = 0.0
    noise_scale: float = 1.0
    channels: int = 2
    threshold_factor: float = 1.02
    T: float = 1.0
    steps: int = 2048
    pad_factor: float = 4.0
    window: float = 0.1
    xi_band: float = 200.0
    support_delta_steps: int = 5
    support_tol: float = 1e-2
    s: float = 0.75
    seed: int = 2024
    paths: int = 100
    theta0: float = 0.75 * np.pi
    n_sources: int = 16
    hs_basis: int = 64
    refine_factor: float = 2.0
    stability_tol: float = 0.25
    residual_tol: float = 5e-2
    grisvard_tol: float = 0.2
    example1_paths: int = 400
    example2_paths: int = 1000
    out: str = "runs"
    threads: int = 1

    def resolved(self) -> dict:
        """Every field with its value, in a JSON-friendly form (the output directory is excluded)."""
        d = asdict(self)
        d.pop("out")
        d.pop("threads")
        return d

    def content_hash(self) -> str:
        text = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def domain(self) -> PolygonalDomain:
        radii = None
        if self.cutoff_r0 is not None or self.cutoff_r1 is not None:
            if self.cutoff_r0 is None or self.cutoff_r1 is None:
                raise ConfigError("domain.cutoff_r0 and domain.cutoff_r1 must be given together")
            probe = build_domain(self.vertices)
            radii = {j: (self.cutoff_r0, self.cutoff_r1) for j in probe.reentrant}
        try:
            return build_domain(self.vertices, radii)
        except ValueError as exc:
            raise ConfigError(f"domain.vertices: {exc}") from exc

    def covariance(self) -> CovarianceSpec:
        if self.variant == "example2":
            return CovarianceSpec(np.array([self.q0]))
        if self.variant == "finite_dim":
            return CovarianceSpec(np.full(self.channels, self.q0))
        return CovarianceSpec.power_law(self.noise_modes, self.q0, self.decay)

    def model(self, **fields) -> CoefficientModel:
        """Coefficient model of the configured variant; example2 needs u0/v0 in ``fields``."""
        params = {"q0": self.q0, "decay": self.decay}
        v = self.variant
        if v == "additive":
            f = None
            if self.drift_scale:
                a = self.drift_scale
                f = lambda x, u: -a * np.sin(u)  # noqa: E731
            return CoefficientModel(v, f=f, lipschitz_f=abs(self.drift_scale), params=params)
        if v == "nemytskii_smooth":
            a, b = self.drift_scale, self.noise_scale
            return CoefficientModel(
                v,
                f=(lambda x, u: -a * np.sin(u)) if a else None,
                g=lambda x, u: b * (1.0 + 0.5 * np.cos(u)),
                lipschitz_f=abs(a),
                lipschitz_g=0.5 * abs(b),
                params={**params, "drift_scale": a, "noise_scale": b},
            )
        if v == "finite_dim":
            b = self.noise_scale
            g_list = tuple(
                (lambda x, u, i=i: b * np.cos((i + 1) * np.pi * x[..., 0] / 2) * (1.0 + 0.5 * np.sin(u)))
                for i in range(self.channels)
            )
            return CoefficientModel(v, g_list=g_list, lipschitz_g=0.5 * abs(b), params={**params, "channels": self.channels})
        return CoefficientModel(v, params={"threshold_factor": self.threshold_factor}, **fields)


# section, key, attribute, parser
_FIELDS = [
    ("domain", "vertices", "vertices", "vertices"),
    ("domain", "cutoff_r0", "cutoff_r0", "optfloat"),
    ("domain", "cutoff_r1", "cutoff_r1", "optfloat"),
    ("mesh", "h", "h", "float"),
    ("mesh", "beta", "beta", "optfloat"),
    ("mesh", "modes", "modes", "int"),
    ("model", "variant", "variant", "str"),
    ("model", "q0", "q0", "float"),
    ("model", "decay", "decay", "float"),
    ("model", "noise_modes", "noise_modes", "int"),
    ("model", "drift_scale", "drift_scale", "float"),
    ("model", "noise_scale", "noise_scale", "float"),
    ("model", "channels", "channels", "int"),
    ("model", "threshold_factor", "threshold_factor", "float"),
    ("time", "T", "T", "float"),
    ("time", "steps", "steps", "int"),
    ("frequency", "pad_factor", "pad_factor", "float"),
    ("frequency", "window", "window", "float"),
    ("frequency", "xi_band", "xi_band", "float"),
    ("frequency", "support_delta_steps", "support_delta_steps", "int"),
    ("frequency", "support_tol", "support_tol", "float"),
    ("sobolev", "s", "s", "float"),
    ("run", "seed", "seed", "int"),
    ("run", "paths", "paths", "int"),
    ("run", "out", "out", "str"),
    ("verify", "theta0", "theta0", "float"),
    ("verify", "n_sources", "n_sources", "int"),
    ("verify", "hs_basis", "hs_basis", "int"),
    ("verify", "refine_factor", "refine_factor", "float"),
    ("verify", "stability_tol", "stability_tol", "float"),
    ("verify", "residual_tol", "residual_tol", "float"),
    ("verify", "grisvard_tol", "grisvard_tol", "float"),
    ("example", "example1_paths", "example1_paths", "int"),
    ("example", "example2_paths", "example2_paths", "int"),
]


def _parse_vertices(text: str) -> list:
    pts = []
    for chunk in text.replace(";", ",").split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        xy = chunk.split()
        if len(xy) != 2:
            raise ValueError(f"expected 'x y' pairs separated by commas, got {chunk!r}")
        pts.append([float(xy[0]), float(xy[1])])
    return pts


def _convert(kind: str, text: str):
    text = text.strip()
    if kind == "vertices":
        return _parse_vertices(text)
    if kind == "optfloat":
        return None if text.lower() in ("", "none", "auto") else float(text)
    if kind == "float":
        return float(text)
    if kind == "int":
        return int(text)
    return text


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    known = {(sec, key) for sec, key, _, _ in _FIELDS}
    for sec in parser.sections():
        for key in parser[sec]:
            if (sec, key) not in known:
                raise ConfigError(f"{sec}.{key}: unknown field")
    values = {"vertices": _parse_vertices(L_SHAPE_VERTICES)}
    for sec, key, attr, kind in _FIELDS:
        if parser.has_option(sec, key):
            try:
                values[attr] = _convert(kind, parser[sec][key])
            except ValueError as exc:
                raise ConfigError(f"{sec}.{key}: {exc}") from exc
    cfg = RunConfig(**values)
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc


def validate(cfg: RunConfig) -> None:
    if not cfg.s > 0.5:
        raise ConfigError(f"sobolev.s = {cfg.s}: the Sobolev order must satisfy s > 1/2")
    if cfg.steps < 2 or cfg.steps & (cfg.steps - 1):
        raise ConfigError(f"time.steps = {cfg.steps}: must be a power of two (FFT grid)")
    if not cfg.T > 0:
        raise ConfigError("time.T: must be positive")
    if not cfg.h > 0:
        raise ConfigError("mesh.h: must be positive")
    if cfg.beta is not None and not 0 < cfg.beta <= 1:
        raise ConfigError("mesh.beta: grading exponent must lie in (0, 1]")
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"model.variant: expected one of {VARIANTS}")
    if cfg.modes < 1:
        raise ConfigError("mesh.modes: must be positive")
    if cfg.variant in ("additive", "nemytskii_smooth") and not 1 <= cfg.noise_modes <= cfg.modes:
        raise ConfigError("model.noise_modes: must lie between 1 and mesh.modes")
    if cfg.q0 < 0:
        raise ConfigError("model.q0: must be nonnegative")
    if cfg.decay <= 1:
        raise ConfigError("model.decay: must exceed 1 for a trace-class covariance")
    if cfg.channels < 1:
        raise ConfigError("model.channels: must be positive")
    if cfg.threshold_factor < 0:
        raise ConfigError("model.threshold_factor: must be nonnegative")
    if cfg.pad_factor < 2:
        raise ConfigError("frequency.pad_factor: must be at least 2 so the grid covers [-T, T]")
    if not 0 <= cfg.window < 1:
        raise ConfigError("frequency.window: taper fraction must lie in [0, 1)")
    if not cfg.xi_band > 0:
        raise ConfigError("frequency.xi_band: must be positive")
    if cfg.seed < 0 or cfg.seed >= 2**64:
        raise ConfigError("run.seed: must be an unsigned 64-bit integer")
    if cfg.paths < 1 or cfg.example1_paths < 1 or cfg.example2_paths < 1:
        raise ConfigError("run.paths: path counts must be positive")
    if not 0 <= cfg.theta0 < np.pi:
        raise ConfigError("verify.theta0: ray opening must lie in [0, pi)")
    if cfg.hs_basis < 2:
        raise ConfigError("verify.hs_basis: need at least two basis elements")
    if not cfg.refine_factor >= 1:
        raise ConfigError("verify.refine_factor: must be at least 1")
    for name in ("stability_tol", "residual_tol", "grisvard_tol"):
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"verify.{name}: must be positive")
    cfg.domain()


def render_config(cfg: RunConfig, include_out: bool = True) -> str:
    """Text form that parses back to the same RunConfig."""
    sections: dict[str, list[str]] = {}
    for sec, key, attr, kind in _FIELDS:
        if attr == "out" and not include_out:
            continue
        value = getattr(cfg, attr)
        if kind == "vertices":
            text = ", ".join(f"{x!r} {y!r}" for x, y in value)
        elif value is None:
            text = "auto"
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        sections.setdefault(sec, []).append(f"{key} = {text}")
    return "\n".join(f"[{sec}]\n" + "\n".join(lines) + "\n" for sec, lines in sections.items())
