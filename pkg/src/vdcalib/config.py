"""Run configuration: YAML loading, validation and hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

import yaml

from . import driver
from .data import DEFAULT_NOISE
from .inference import MHConfig, PriorSpec, SMCConfig
from .params import VehicleParams

_TOP_KEYS = {"seed", "output_dir", "simulation", "vehicle", "truth", "noise",
             "maneuvers", "test", "stages", "sampler"}
_STAGE_KEYS = {"name", "maneuver", "start_speed", "t0", "tf", "noise_seed", "data",
               "channels", "priors", "upstream"}
_SAMPLER_KEYS = {"kind", "n_chains", "n_draws", "target_accept", "ess_fraction",
                 "max_mh_steps", "n_tune"}


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


def default_config_path() -> Path:
    return Path(str(resources.files("vdcalib") / "default_config.yaml"))


class RunConfig:
    """Parsed and validated run configuration.

    ``raw`` keeps the nested dictionary exactly as loaded; ``hash`` is a
    short digest of its canonical JSON form and is written into every
    output file.
    """

    def __init__(self, raw: dict, path: Path | None = None):
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a mapping")
        self.raw = copy.deepcopy(raw)
        self.path = path
        self._validate()

    # -- loading ------------------------------------------------------------
    @classmethod
    def load(cls, path=None) -> "RunConfig":
        path = Path(path) if path is not None else default_config_path()
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as err:
            raise ConfigError(f"{path}: not valid YAML ({err})") from None
        return cls(raw, path)

    @classmethod
    def default(cls) -> "RunConfig":
        return cls.load(None)

    def override(self, **changes) -> "RunConfig":
        """Copy with top-level or dotted keys replaced, e.g. ``sampler.n_draws=10``."""
        raw = copy.deepcopy(self.raw)
        for key, val in changes.items():
            node = raw
            parts = key.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = val
        return RunConfig(raw, self.path)

    @property
    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # -- validation ---------------------------------------------------------
    def _validate(self):
        raw = self.raw
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        if "seed" not in raw or not isinstance(raw["seed"], int):
            raise ConfigError("config needs an integer 'seed'")
        try:
            self.vehicle_params()
            self.truth_params()
        except (KeyError, ValueError, TypeError) as err:
            raise ConfigError(f"vehicle/truth block: {err}") from None
        for name, args in (raw.get("maneuvers") or {}).items():
            try:
                driver.maneuver(name, **(args or {}))
            except (TypeError, ValueError) as err:
                raise ConfigError(f"maneuver {name!r}: {err}") from None
        for ch, s in (raw.get("noise") or {}).items():
            if not isinstance(s, (int, float)) or s < 0:
                raise ConfigError(f"noise sigma for {ch!r} must be a number >= 0")
        names = []
        for st in raw.get("stages") or []:
            extra = set(st) - _STAGE_KEYS
            if extra:
                raise ConfigError(f"stage {st.get('name')!r}: unknown key(s) {sorted(extra)}")
            for key in ("name", "maneuver", "t0", "tf", "channels", "priors"):
                if key not in st:
                    raise ConfigError(f"stage {st.get('name')!r}: missing {key!r}")
            try:
                PriorSpec.from_dict(st["priors"])
            except (TypeError, ValueError) as err:
                raise ConfigError(f"stage {st['name']!r} priors: {err}") from None
            for p, src in (st.get("upstream") or {}).items():
                if src not in names:
                    raise ConfigError(f"stage {st['name']!r}: upstream {src!r} for {p!r} "
                                      "must name an earlier stage")
            names.append(st["name"])
        extra = set(raw.get("sampler") or {}) - _SAMPLER_KEYS
        if extra:
            raise ConfigError(f"sampler: unknown key(s) {sorted(extra)}")

    # -- accessors ----------------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.raw.get("output_dir", "runs"))

    @property
    def dt(self) -> float:
        return float((self.raw.get("simulation") or {}).get("dt", 5e-3))

    @property
    def sample_dt(self) -> float:
        return float((self.raw.get("simulation") or {}).get("sample_dt", 0.01))

    def vehicle_params(self) -> VehicleParams:
        return VehicleParams.from_dict(self.raw.get("vehicle") or {})

    def truth_params(self) -> VehicleParams:
        return self.vehicle_params().replace(**{k: float(v) for k, v in
                                                (self.raw.get("truth") or {}).items()})

    def noise(self) -> dict:
        return dict(self.raw.get("noise") or DEFAULT_NOISE)

    def schedule(self, name: str):
        args = (self.raw.get("maneuvers") or {}).get(name) or {}
        return driver.maneuver(name, **args)

    def stage_names(self):
        return [s["name"] for s in self.raw.get("stages") or []]

    def stage_plan(self, name: str) -> dict:
        for st in self.raw.get("stages") or []:
            if st["name"] == name:
                return {
                    "name": st["name"], "maneuver": st["maneuver"],
                    "maneuver_args": (self.raw.get("maneuvers") or {}).get(st["maneuver"]) or {},
                    "start_speed": float(st.get("start_speed", 5.0)),
                    "t0": float(st["t0"]), "tf": float(st["tf"]),
                    "noise_seed": int(st.get("noise_seed", self.seed)),
                    "channels": dict(st["channels"]),
                    "priors": PriorSpec.from_dict(st["priors"]),
                    "upstream": dict(st.get("upstream") or {}),
                    "data": st.get("data", f"data/{st['name']}.csv"),
                }
        raise ConfigError(f"no stage named {name!r}; available: {self.stage_names()}")

    def sampler(self, kind: str | None = None, **overrides):
        s = dict(self.raw.get("sampler") or {})
        kind = kind or s.pop("kind", "smc")
        s.pop("kind", None)
        s.setdefault("seed", self.seed)
        s.update({k: v for k, v in overrides.items() if v is not None})
        if kind == "smc":
            keys = SMCConfig.__dataclass_fields__
            return kind, SMCConfig(**{k: v for k, v in s.items() if k in keys})
        if kind == "mh":
            keys = MHConfig.__dataclass_fields__
            return kind, MHConfig(**{k: v for k, v in s.items() if k in keys})
        raise ConfigError(f"unknown sampler {kind!r} (use 'smc' or 'mh')")

    def metadata(self) -> dict:
        return {"config_hash": self.hash, "seed": self.seed}
