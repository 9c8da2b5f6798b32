"""Experiment configuration: a flat, typed ``key = value`` text file.

Values are JSON literals (numbers, lists, ``true``/``false``, quoted strings);
a bare word is read as a string. ``#`` starts a comment. Unknown keys are
errors. ``preset = pendulum-paper`` fills in the benchmark values, which
explicit keys then override.
"""

import json
import math
from dataclasses import dataclass, fields

import numpy as np

from . import plants
from .costs import COMM_CHARGES, STAGE_KINDS, CostConfig
from .errors import ValidationError
from .gp import DEFAULT_CAP, DEFAULT_NOISE, Hyperparams
from .vi import VI_RIDGE, VI_TIE_TOL, RepresentativeGrid, box_grid

PRESETS = {
    "pendulum-paper": {
        "plant": "pendulum",
        "dt": 0.2,
        "input_low": [-1.5],
        "input_high": [1.5],
        "x_init": [1.0, 0.2],
        "M": 10,
        "state_low": [-1.5, -1.5],
        "state_high": [1.5, 1.5],
        "state_spacing": 0.3,
        "input_spacing": 0.3,
        "Q": [[1.0, 0.0], [0.0, 1.0]],
        "stage_kind": "exponential",
        "gamma": 0.0,
        "n_epi": 10,
    },
}

# keys that have no default and must come from the file or a preset
REQUIRED = (
    "plant",
    "input_low",
    "input_high",
    "x_init",
    "M",
    "state_low",
    "state_high",
    "state_spacing",
    "input_spacing",
    "Q",
    "seed",
)


@dataclass
class ExperimentConfig:
    plant: str = None
    dt: float = 0.2
    linear_a: float = 0.5
    linear_b: float = 1.0
    input_low: list = None
    input_high: list = None
    x_init: list = None
    # grid
    state_low: list = None
    state_high: list = None
    state_spacing: float = None
    input_spacing: float = None
    # costs
    stage_kind: str = "exponential"
    comm_charge: str = "successor"
    Q: list = None
    gamma: float = 0.0
    M: int = None
    # gp
    gp_alpha: float = 1.0
    gp_lengthscales: list = None
    gp_noise: float = DEFAULT_NOISE
    gp_optimize: bool = True
    gp_optimize_noise: bool = False
    gp_cap: int = DEFAULT_CAP
    gp_restarts: int = 3
    gp_maxiter: int = 200
    # value iteration
    vi_n_ite: int = 15
    vi_discount: float = 0.98
    vi_width_factor: float = 1.5
    vi_ridge: float = VI_RIDGE
    vi_tol: float = 1e-4
    vi_tie_tol: float = VI_TIE_TOL
    # learning loop
    n_epi: int = 10
    n_max: int = 40
    eps: float = 0.3
    eps_final: float = None
    seed: int = None
    # evaluation
    horizon: int = 100
    init_radius: float = 0.3
    out: str = "runs/default"
    preset: str = None

    # -- derived objects -------------------------------------------------
    def make_plant(self):
        if self.plant == "pendulum":
            p = plants.pendulum(self.dt)
        else:
            p = plants.linear(self.linear_a, self.linear_b)
        return plants.PlantSpec(
            p.name, p.state_dim, p.input_dim, self.input_low, self.input_high, p.step
        )

    def make_grid(self):
        states = box_grid(self.state_low, self.state_high, self.state_spacing)
        inputs = box_grid(self.input_low, self.input_high, self.input_spacing)
        return RepresentativeGrid(states, inputs, self.M)

    def make_cost(self):
        return CostConfig(
            np.asarray(self.Q, dtype=float), self.gamma, self.M, self.stage_kind, self.comm_charge
        )

    def make_hyper(self, plant):
        d = plant.state_dim + plant.input_dim
        ls = self.gp_lengthscales if self.gp_lengthscales is not None else [1.0] * d
        return Hyperparams(self.gp_alpha, ls, self.gp_noise)

    @property
    def rbf_width(self):
        return self.vi_width_factor * self.state_spacing

    # -- text form -------------------------------------------------------
    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self):
        lines = []
        for k, v in self.to_dict().items():
            if v is None:
                continue
            lines.append(f"{k} = {json.dumps(v)}")
        return "\n".join(lines) + "\n"

    def replace(self, **kw):
        d = self.to_dict()
        d.update(kw)
        return validate(d)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_text(text, source="<config>"):
    """Parse ``key = value`` lines into a raw dict; syntax problems are collected."""
    raw, problems = {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{source}:{lineno}: expected 'key = value'")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            raw[key] = json.loads(val)
        except json.JSONDecodeError:
            raw[key] = val
    if problems:
        raise ValidationError(problems)
    return raw


def _coerce(key, val, problems):
    t = _TYPES[key]
    if val is None:
        return None
    if t is bool:
        if isinstance(val, bool):
            return val
    elif t is int:
        if isinstance(val, (int, float)) and not isinstance(val, bool) and float(val).is_integer():
            return int(val)
    elif t is float:
        if isinstance(val, (int, float)) and not isinstance(val, bool) and math.isfinite(val):
            return float(val)
    elif t is str:
        if isinstance(val, str):
            return val
    elif t is list:
        if isinstance(val, list):
            return val
        if isinstance(val, (int, float)) and not isinstance(val, bool):
            return [val]
    problems.append(f"{key}: expected {t.__name__}, got {val!r}")
    return None


def _check_vector(cfg, key, n, problems):
    v = getattr(cfg, key)
    if v is None:
        return
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        problems.append(f"{key}: not a numeric vector")
        return
    if arr.ndim != 1 or arr.size != n:
        problems.append(f"{key}: expected {n} entries, got shape {arr.shape}")


def validate(raw):
    """Build an ExperimentConfig from a raw dict, reporting every violated field at once."""
    raw = dict(raw)
    problems = []
    preset = raw.get("preset")
    merged = {}
    if preset is not None:
        if preset not in PRESETS:
            problems.append(f"preset: unknown preset {preset!r} (known: {sorted(PRESETS)})")
        else:
            merged.update(PRESETS[preset])
    merged.update(raw)
    unknown = sorted(set(merged) - set(_TYPES))
    for k in unknown:
        problems.append(f"{k}: unknown key")
    values = {}
    for k, v in merged.items():
        if k in _TYPES:
            values[k] = _coerce(k, v, problems)
    for k in REQUIRED:
        if values.get(k) is None and not any(p.startswith(f"{k}:") for p in problems):
            problems.append(f"{k}: required")
    if problems:
        raise ValidationError(problems)
    cfg = ExperimentConfig(**values)
    _semantic_checks(cfg, problems)
    if problems:
        raise ValidationError(problems)
    return cfg


def _semantic_checks(cfg, problems):
    if cfg.plant not in ("pendulum", "linear"):
        problems.append(f"plant: must be 'pendulum' or 'linear', got {cfg.plant!r}")
        return
    n_x, n_u = (2, 1) if cfg.plant == "pendulum" else (1, 1)
    for key, n in (
        ("input_low", n_u),
        ("input_high", n_u),
        ("x_init", n_x),
        ("state_low", n_x),
        ("state_high", n_x),
        ("gp_lengthscales", n_x + n_u),
    ):
        _check_vector(cfg, key, n, problems)
    try:
        Q = np.asarray(cfg.Q, dtype=float)
        if Q.shape != (n_x, n_x):
            problems.append(f"Q: expected {n_x}x{n_x} matrix, got shape {Q.shape}")
        elif not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q)[0] <= 0:
            problems.append("Q: must be symmetric positive definite")
    except (TypeError, ValueError):
        problems.append("Q: not a numeric matrix")
    positive = ("dt", "state_spacing", "input_spacing", "gp_alpha", "gp_noise", "vi_width_factor")
    for key in positive:
        if not getattr(cfg, key) > 0:
            problems.append(f"{key}: must be positive")
    for key in ("M", "gp_cap", "n_max", "horizon"):
        if getattr(cfg, key) < 1:
            problems.append(f"{key}: must be >= 1")
    for key in ("n_epi", "vi_n_ite", "gp_restarts", "gp_maxiter"):
        if getattr(cfg, key) < 0:
            problems.append(f"{key}: must be >= 0")
    if cfg.gamma < 0:
        problems.append("gamma: must be nonnegative")
    for key in ("vi_ridge", "vi_tie_tol", "vi_tol"):
        if getattr(cfg, key) < 0:
            problems.append(f"{key}: must be nonnegative")
    if not 0 < cfg.vi_discount <= 1:
        problems.append("vi_discount: must lie in (0, 1]")
    for key in ("eps", "eps_final"):
        v = getattr(cfg, key)
        if v is not None and not 0 <= v <= 1:
            problems.append(f"{key}: must lie in [0, 1]")
    if cfg.stage_kind not in STAGE_KINDS:
        problems.append(f"stage_kind: must be one of {STAGE_KINDS}")
    if cfg.comm_charge not in COMM_CHARGES:
        problems.append(f"comm_charge: must be one of {COMM_CHARGES}")
    if cfg.gp_lengthscales is not None and any(v <= 0 for v in cfg.gp_lengthscales):
        problems.append("gp_lengthscales: must be positive")
    if not problems:
        lo, hi = np.asarray(cfg.input_low), np.asarray(cfg.input_high)
        if np.any(lo > hi):
            problems.append("input_low: exceeds input_high")
        elif np.any(lo > 0) or np.any(hi < 0):
            problems.append("input_low: input box must contain the origin")
        slo, shi = np.asarray(cfg.state_low), np.asarray(cfg.state_high)
        if np.any(slo > 0) or np.any(shi < 0):
            problems.append("state_low: state box must contain the origin")


def load(path, overrides=None):
    with open(path) as fh:
        raw = parse_text(fh.read(), str(path))
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return validate(raw)
