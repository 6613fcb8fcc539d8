"""Run configuration: dataclasses with defaults plus JSON-schema validation."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import jsonschema

from .kernels import STATION_MEAN_SD, preset, preset_noise_var
from .smoothhmc import SamplerConfig


class ConfigError(ValueError):
    pass


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("tempimpute").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate_document(doc, schema_name: str) -> None:
    try:
        jsonschema.validate(doc, load_schema(schema_name))
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{schema_name}: {where}: {e.message}") from None


@dataclass(frozen=True)
class FitSettings:
    n_starts: int = 5
    max_iters: int = 200
    tol: float = 1e-7
    max_chunk_points: int = 6000


@dataclass(frozen=True)
class SamplerSettings:
    chains: int = 4
    warmup: int = 10000
    iters: int = 10000
    n_leapfrog: int = 32
    target_accept: float = 0.8
    k: float = 10.0
    eps: float = 0.1
    mu_sd: float | None = STATION_MEAN_SD
    init: str = "feasible"


@dataclass(frozen=True)
class SimulateSettings:
    days: float = 60
    meas_hour: int = 11
    hidden: str = "KALO"
    start_date: str = "2020-01-01"
    utc_offset_hours: float = -6.0
    base_temp: float = 10.0
    offset_sd: float = 1.0
    diurnal_amplitude: float = 0.0
    peak_hour: float = 15.0
    stations: dict | None = None      # id -> [lon, lat]; default is the Iowa layout


@dataclass(frozen=True)
class ToySettings:
    p: int = 100
    x_min: float = 8.8
    x_max: float = 12.5
    hard_init: str = "uniform"


@dataclass(frozen=True)
class VariogramSettings:
    max_lag_hours: float = 48.0
    lag_bin_hours: float = 1.0


@dataclass(frozen=True)
class InferHourSettings:
    hours: tuple = tuple(range(24))


@dataclass(frozen=True)
class RunConfig:
    kernel: str = "se_x_se"
    hyper_overrides: dict = field(default_factory=dict)
    noise_var: float | None = None
    chunk_days: float = 10.0
    predict_window_days: float = 73.0
    predict_overlap_days: float = 48.0
    impute_window_days: int = 9
    impute_overlap_days: int = 3
    include_noise: bool = True
    seed: int = 0
    threads: int = 1
    out_dir: str = "out"
    fit: FitSettings = FitSettings()
    sampler: SamplerSettings = SamplerSettings()
    simulate: SimulateSettings = SimulateSettings()
    toy: ToySettings = ToySettings()
    variogram: VariogramSettings = VariogramSettings()
    infer_hour: InferHourSettings = InferHourSettings()

    _SECTIONS = {"fit": FitSettings, "sampler": SamplerSettings, "simulate": SimulateSettings,
                 "toy": ToySettings, "variogram": VariogramSettings, "infer_hour": InferHourSettings}

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        validate_document(doc, "run_config")
        kw = {}
        for key, val in doc.items():
            sec = cls._SECTIONS.get(key)
            if sec is not None:
                if "hours" in val:
                    val = dict(val, hours=tuple(val["hours"]))
                kw[key] = sec(**val)
            else:
                kw[key] = val
        cfg = cls(**kw)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        from .io import read_json
        return cls.from_dict(read_json(path))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["infer_hour"]["hours"] = list(d["infer_hour"]["hours"])
        return d

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def check(self) -> None:
        """Cross-field checks the schema cannot express."""
        if self.predict_overlap_days >= self.predict_window_days:
            raise ConfigError("predict_overlap_days must be smaller than predict_window_days")
        if self.impute_window_days - 2 * self.impute_overlap_days < 1:
            raise ConfigError("impute_window_days must exceed twice impute_overlap_days")
        if self.toy.x_min >= self.toy.x_max:
            raise ConfigError("toy.x_min must be below toy.x_max")
        try:
            self.prior_kernel()
        except (KeyError, ValueError) as e:
            raise ConfigError(f"hyper_overrides: {e}") from None

    def prior_kernel(self):
        return preset(self.kernel, **self.hyper_overrides)

    def prior_noise_var(self) -> float:
        return preset_noise_var(self.kernel) if self.noise_var is None else self.noise_var

    def sampler_config(self) -> SamplerConfig:
        s = self.sampler
        return SamplerConfig(chains=s.chains, warmup=s.warmup, iters=s.iters, n_leapfrog=s.n_leapfrog,
                             target_accept=s.target_accept, k=s.k, eps=s.eps, mu_sd=s.mu_sd,
                             init=s.init, seed=self.seed)
