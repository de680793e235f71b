"""Experiment configuration: one key/value file with sections.

Example::

    [general]
    seed = 1
    workdir = run

    [fibre]
    grid = 64
    n_sensors = 2048

Unknown sections or keys are rejected.  Every field can also be overridden
on the command line (``--fibre-n-sensors 1024``).
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields

from .errors import ValidationError
from .rng import derive_seed

# stage keys for seed derivation from the master seed
STAGE_FIBRE = 1
STAGE_CAL_NOISE = 2
STAGE_LAYOUT = 3
STAGE_TISSUE = 4
STAGE_MEASUREMENT = 5


@dataclass
class General:
    seed: int = 1
    workdir: str = "."


@dataclass
class Fibre:
    grid: int = 64
    n_sensors: int = 2048
    n_modes: int = 512
    decay_rate: float = 2.0
    coupling: float = 0.0
    sigma: float = 0.0  # measurement noise of acquired fields


@dataclass
class Calibration:
    M: int = 100
    spot_width: float = 0.04
    scheme: str = "two"
    beta: float = 3.141592653589793
    gamma: float = 4.1887902047863905
    sigma: float = 0.0
    jitter: float = 0.0


@dataclass
class Reconstruction:
    system: str = "fourier"  # or "spots"
    K: int = 400
    method: str = "l1"
    lam: float = 0.25
    tol: float = 1e-8
    max_iter: int = 2000
    normalise: bool = True


@dataclass
class Study:
    samples_per_group: int = 6
    sub_images: int = 8
    low_category: int = 1
    high_category: int = 6
    n_categories: int = 6
    null: bool = False
    shared_phase: bool = False


@dataclass
class ExperimentConfig:
    general: General = field(default_factory=General)
    fibre: Fibre = field(default_factory=Fibre)
    calibration: Calibration = field(default_factory=Calibration)
    reconstruction: Reconstruction = field(default_factory=Reconstruction)
    study: Study = field(default_factory=Study)

    def seed_for(self, stage, *keys):
        return derive_seed(self.general.seed, stage, *keys)

    def as_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        text = json.dumps(self.as_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    def validate(self):
        f, c, r, s = self.fibre, self.calibration, self.reconstruction, self.study
        if f.grid < 2 or f.n_sensors < 1 or f.n_modes < 1:
            raise ValidationError("fibre dimensions must be positive")
        if f.n_modes > min(2 * f.n_sensors, 2 * f.grid * f.grid):
            raise ValidationError("fibre n_modes exceeds min(2N, 2P)")
        if c.M < 1 or c.spot_width <= 0:
            raise ValidationError("calibration needs M >= 1 and spot_width > 0")
        if c.scheme not in ("two", "three"):
            raise ValidationError(f"unknown scheme {c.scheme!r}")
        if r.system not in ("fourier", "spots"):
            raise ValidationError(f"unknown representation system {r.system!r}")
        if s.samples_per_group < 2 or s.sub_images < 1:
            raise ValidationError("study needs >= 2 samples per group and >= 1 sub-image")
        if not (1 <= s.low_category <= s.n_categories and 1 <= s.high_category <= s.n_categories):
            raise ValidationError("study categories out of range")
        return self


SECTIONS = {f.name: f.type for f in fields(ExperimentConfig)}


def _section_types():
    return {"general": General, "fibre": Fibre, "calibration": Calibration,
            "reconstruction": Reconstruction, "study": Study}


def _coerce(cls, key, text):
    ftypes = {f.name: f.type for f in fields(cls)}
    if key not in ftypes:
        raise ValidationError(f"unknown key {key!r} in section [{cls.__name__.lower()}]")
    t = ftypes[key]
    try:
        if t in ("bool", bool):
            low = str(text).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if t in ("int", int):
            return int(text)
        if t in ("float", float):
            return float(text)
        return str(text)
    except ValueError:
        raise ValidationError(f"bad value {text!r} for {cls.__name__.lower()}.{key}") from None


def paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """Switch to the experimental system size (slow)."""
    cfg.calibration.M = 936
    cfg.fibre.n_sensors = 34973
    cfg.reconstruction.K = 1024
    return cfg


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Read a config file (or defaults) and apply ``overrides``.

    ``overrides`` maps ``"section.key"`` to string values.
    """
    cfg = ExperimentConfig()
    types = _section_types()
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise ValidationError(f"{path}: {exc}") from None
        for sec in cp.sections():
            if sec not in types:
                raise ValidationError(f"{path}: unknown section [{sec}]")
            obj = getattr(cfg, sec)
            for key, val in cp.items(sec):
                setattr(obj, key, _coerce(types[sec], key, val))
    for dotted, val in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        if sec not in types:
            raise ValidationError(f"unknown section in override {dotted!r}")
        setattr(getattr(cfg, sec), key, _coerce(types[sec], key, val))
    return cfg.validate()


def write_config(path, cfg: ExperimentConfig):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for sec, values in cfg.as_dict().items():
        cp[sec] = {k: str(v) for k, v in values.items()}
    with open(path, "w") as fh:
        cp.write(fh)


def override_fields():
    """``(section, key, type)`` for every overridable field."""
    out = []
    for sec, cls in _section_types().items():
        for f in fields(cls):
            out.append((sec, f.name, f.type))
    return out
