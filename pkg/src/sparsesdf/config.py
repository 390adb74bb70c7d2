"""Per-command configuration sections and the shared INI file.

One file holds every section (``[synth]``, ``[priors]``, ``[train]``,
``[field]``, ``[mesh]``, ``[eval]``, ``[gradcheck]``). Values resolve in the
order dataclass default, file key, command-line flag.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from . import priors
from .gradcheck import GradcheckConfig
from .train import TrainConfig, _format, fast_field_config, update_dataclass


@dataclass
class SynthConfig:
    scene: str = "room-two-chairs"
    views: int = 10
    pattern: str = "ring"
    matches_per_pair: int = 2000
    noise_px: float = 0.5
    outlier_rate: float = 0.1
    seed: int = 0
    width: int = 128
    height: int = 96
    textured: bool = True


@dataclass
class PriorsConfig:
    epsilon: float = priors.DEFAULT_EPSILON
    gamma: float = priors.DEFAULT_GAMMA
    angular_filter: bool = True
    bins: int = 10


@dataclass
class MeshConfig:
    resolution: int = 256
    # padding around the room box, as a fraction of its extent
    margin: float = 0.05


@dataclass
class EvalConfig:
    # 0 selects the default: 2% of the room diagonal for synthetic scenes, 0.05 m otherwise
    tau: float = 0.0
    points: int = 100_000
    seed: int = 0
    gt_resolution: int = 256


def default_sections() -> dict[str, object]:
    return {
        "synth": SynthConfig(),
        "priors": PriorsConfig(),
        "train": TrainConfig(),
        "field": fast_field_config(),
        "mesh": MeshConfig(),
        "eval": EvalConfig(),
        "gradcheck": GradcheckConfig(),
    }


# field keys derived from the scene at run time, never read from files
DERIVED_KEYS = {"field": ("center", "scale")}


def read_file(path) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(f"config file {path} not found")
    known = default_sections()
    out = {}
    for s in cp.sections():
        if s not in known:
            raise KeyError(f"unknown config section [{s}]; expected one of {sorted(known)}")
        out[s] = dict(cp[s])
    return out


def resolve(section: str, file_values: dict | None = None, overrides: dict | None = None):
    """Dataclass for ``section`` with file keys applied, then non-None overrides."""
    cfg = default_sections()[section]
    if file_values and section in file_values:
        cfg = update_dataclass(cfg, file_values[section])
    if overrides:
        cfg = update_dataclass(cfg, {k: v for k, v in overrides.items() if v is not None})
    return cfg


def section_dict(cfg) -> dict[str, str]:
    return {f.name: _format(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}


def write_file(path, sections: dict[str, object]) -> None:
    cp = configparser.ConfigParser()
    for name, cfg in sections.items():
        values = section_dict(cfg)
        for k in DERIVED_KEYS.get(name, ()):
            values.pop(k, None)
        cp[name] = values
    with open(path, "w") as fh:
        cp.write(fh)


def defaults_text() -> str:
    import io

    buf = io.StringIO()
    cp = configparser.ConfigParser()
    for name, cfg in default_sections().items():
        values = section_dict(cfg)
        for k in DERIVED_KEYS.get(name, ()):
            values.pop(k, None)
        cp[name] = values
    cp.write(buf)
    return buf.getvalue()


def load_sections(path: str | Path | None) -> dict[str, dict[str, str]]:
    return read_file(path) if path else {}
