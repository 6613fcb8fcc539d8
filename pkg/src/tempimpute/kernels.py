"""Composable stationary covariance functions over (location, time).

A kernel is a small tree: base kernels (``SESpace``, ``SETime``,
``Periodic24``, ``RQTime``, ``StationMean``) combined by ``Sum`` and
``Product``. Every base node carries a unique ``name``; its hyperparameters
are addressed as ``"<name>.<param>"``. Free hyperparameters live in log
space for fitting, and all gradients are taken with respect to log values.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import ClassVar, Sequence

import numpy as np

from .geom_time import Location

PERIOD_HOURS = 24.0


@dataclass(frozen=True)
class Points:
    """Column arrays of (station, east, north, time) query/observation points."""

    station: np.ndarray
    east: np.ndarray
    north: np.ndarray
    time: np.ndarray

    def __post_init__(self):
        n = len(self.time)
        for name in ("station", "east", "north"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"Points.{name} length differs from time length {n}")

    def __len__(self) -> int:
        return len(self.time)

    @classmethod
    def at(cls, loc: Location, times) -> "Points":
        t = np.atleast_1d(np.asarray(times, dtype=float))
        n = len(t)
        return cls(np.full(n, loc.station_id, dtype=object), np.full(n, loc.east_km),
                   np.full(n, loc.north_km), t)

    @classmethod
    def concat(cls, parts: Sequence["Points"]) -> "Points":
        return cls(np.concatenate([p.station for p in parts]),
                   np.concatenate([p.east for p in parts]),
                   np.concatenate([p.north for p in parts]),
                   np.concatenate([p.time for p in parts]))

    def take(self, idx) -> "Points":
        return Points(self.station[idx], self.east[idx], self.north[idx], self.time[idx])


class Lags:
    """Pairwise separations between two point sets, shared by all kernel nodes."""

    def __init__(self, a: Points, b: Points):
        self.dt = a.time[:, None] - b.time[None, :]
        de = a.east[:, None] - b.east[None, :]
        dn = a.north[:, None] - b.north[None, :]
        self.d2 = de * de + dn * dn
        self._a_station = a.station
        self._b_station = b.station
        self._same = None

    @property
    def same_station(self):
        if self._same is None:
            self._same = self._a_station[:, None] == self._b_station[None, :]
        return self._same

    @classmethod
    def from_separation(cls, h, r, same_station=False):
        """Lags for pure separations: spatial distance ``h`` km, time lag ``r`` h."""
        obj = cls.__new__(cls)
        h = np.asarray(h, dtype=float)
        r = np.asarray(r, dtype=float)
        h, r = np.broadcast_arrays(h, r)
        obj.dt = r
        obj.d2 = h * h
        obj._same = np.full(r.shape, bool(same_station))
        return obj


class Kernel:
    """Base class for kernel tree nodes."""

    kind: str = ""

    # -- tree protocol ---------------------------------------------------
    def leaves(self) -> list["BaseKernel"]:
        raise NotImplementedError

    def value(self, lags: Lags) -> np.ndarray:
        raise NotImplementedError

    def grads(self, lags: Lags) -> dict[str, np.ndarray]:
        """d value / d log(theta) for each free hyperparameter."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def map_leaves(self, fn) -> "Kernel":
        raise NotImplementedError

    # -- hyperparameter access -------------------------------------------
    def hyper_names(self) -> list[str]:
        return [f"{leaf.name}.{p}" for leaf in self.leaves() for p in leaf.free_params]

    def hyper_values(self) -> np.ndarray:
        return np.array([leaf.params[p] for leaf in self.leaves() for p in leaf.free_params])

    def hyper_vector(self) -> "HyperVector":
        return HyperVector(tuple(self.hyper_names()), np.log(self.hyper_values()))

    def with_hyper(self, values: dict[str, float]) -> "Kernel":
        """Copy with some hyperparameters replaced (raw, not log, values)."""
        unknown = set(values) - set(self.all_param_names())
        if unknown:
            raise KeyError(f"unknown hyperparameter(s): {sorted(unknown)}")

        def update(leaf):
            new = {p: values.get(f"{leaf.name}.{p}", v) for p, v in leaf.params.items()}
            return leaf.replace(params=new)
        return self.map_leaves(update)

    def with_log_hyper(self, log_values) -> "Kernel":
        names = self.hyper_names()
        log_values = np.asarray(log_values, dtype=float)
        if len(log_values) != len(names):
            raise ValueError(f"expected {len(names)} log-hyperparameters, got {len(log_values)}")
        return self.with_hyper({n: float(np.exp(v)) for n, v in zip(names, log_values)})

    def all_param_names(self) -> list[str]:
        return [f"{leaf.name}.{p}" for leaf in self.leaves() for p in leaf.params]

    def param(self, name: str) -> float:
        node, _, p = name.rpartition(".")
        for leaf in self.leaves():
            if leaf.name == node and p in leaf.params:
                return leaf.params[p]
        raise KeyError(name)

    # -- evaluation helpers ----------------------------------------------
    def __call__(self, a: Points, b: Points | None = None) -> np.ndarray:
        return self.value(Lags(a, a if b is None else b))

    def eval(self, a: Location, b: Location, t: float, u: float) -> float:
        pa = Points.at(a, [t])
        pb = Points.at(b, [u])
        return float(self.value(Lags(pa, pb))[0, 0])

    def has_station_mean(self) -> bool:
        return any(isinstance(leaf, StationMean) for leaf in self.leaves())

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class BaseKernel(Kernel):
    name: str
    params: dict = field(default_factory=dict)
    fixed: frozenset = frozenset()

    param_names: ClassVar[tuple] = ()

    def __post_init__(self):
        missing = set(self.param_names) - set(self.params)
        extra = set(self.params) - set(self.param_names)
        if missing or extra:
            raise ValueError(f"{self.kind} {self.name!r}: params must be exactly {self.param_names}")
        for p, v in self.params.items():
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{self.name}.{p} must be finite and > 0, got {v}")
        if set(self.fixed) - set(self.param_names):
            raise ValueError(f"unknown fixed params {set(self.fixed)} for {self.name}")

    @property
    def free_params(self) -> list[str]:
        return [p for p in self.param_names if p not in self.fixed]

    def leaves(self):
        return [self]

    def map_leaves(self, fn):
        return fn(self)

    def replace(self, **kw):
        d = {"name": self.name, "params": dict(self.params), "fixed": self.fixed}
        d.update(kw)
        return type(self)(**d)

    def grads(self, lags):
        return {f"{self.name}.{p}": self.params[p] * self.dparam(lags, p) for p in self.free_params}

    def dparam(self, lags: Lags, p: str) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self):
        return {"kind": self.kind, "name": self.name,
                "params": {k: float(v) for k, v in self.params.items()},
                "fixed": sorted(self.fixed)}

    # stationary value at zero lag (same station)
    def zero_lag(self) -> float:
        return float(self.value(Lags.from_separation(0.0, 0.0, same_station=True)))


class SESpace(BaseKernel):
    kind = "se_space"
    param_names = ("variance", "lengthscale")

    def __init__(self, name="space", params=None, fixed=frozenset({"variance"}), **kw):
        params = dict(params or {})
        params.update(kw)
        params.setdefault("variance", 1.0)
        super().__init__(name, params, frozenset(fixed))

    def value(self, lags):
        v, ell = self.params["variance"], self.params["lengthscale"]
        return v * np.exp(-0.5 * lags.d2 / ell**2)

    def dparam(self, lags, p):
        v, ell = self.params["variance"], self.params["lengthscale"]
        e = np.exp(-0.5 * lags.d2 / ell**2)
        if p == "variance":
            return e
        return v * e * lags.d2 / ell**3


class SETime(BaseKernel):
    kind = "se_time"
    param_names = ("variance", "lengthscale")

    def __init__(self, name="time", params=None, fixed=frozenset(), **kw):
        params = dict(params or {})
        params.update(kw)
        super().__init__(name, params, frozenset(fixed))

    def value(self, lags):
        v, ell = self.params["variance"], self.params["lengthscale"]
        return v * np.exp(-0.5 * lags.dt**2 / ell**2)

    def dparam(self, lags, p):
        v, ell = self.params["variance"], self.params["lengthscale"]
        e = np.exp(-0.5 * lags.dt**2 / ell**2)
        if p == "variance":
            return e
        return v * e * lags.dt**2 / ell**3


class Periodic24(BaseKernel):
    """Periodic squared exponential with a fixed 24 h period.

    ``lengthscale`` is dimensionless: it divides the sine term directly.
    """

    kind = "periodic24"
    param_names = ("variance", "lengthscale")

    def __init__(self, name="diurnal", params=None, fixed=frozenset(), **kw):
        params = dict(params or {})
        params.update(kw)
        super().__init__(name, params, frozenset(fixed))

    def _s2(self, lags):
        return np.sin(np.pi * lags.dt / PERIOD_HOURS) ** 2

    def value(self, lags):
        v, ell = self.params["variance"], self.params["lengthscale"]
        return v * np.exp(-2.0 * self._s2(lags) / ell**2)

    def dparam(self, lags, p):
        v, ell = self.params["variance"], self.params["lengthscale"]
        s2 = self._s2(lags)
        e = np.exp(-2.0 * s2 / ell**2)
        if p == "variance":
            return e
        return v * e * 4.0 * s2 / ell**3


class RQTime(BaseKernel):
    kind = "rq_time"
    param_names = ("variance", "lengthscale", "alpha")

    def __init__(self, name="rq", params=None, fixed=frozenset(), **kw):
        params = dict(params or {})
        params.update(kw)
        super().__init__(name, params, frozenset(fixed))

    def value(self, lags):
        v, ell, a = self.params["variance"], self.params["lengthscale"], self.params["alpha"]
        return v * (1.0 + lags.dt**2 / (2.0 * a * ell**2)) ** (-a)

    def dparam(self, lags, p):
        v, ell, a = self.params["variance"], self.params["lengthscale"], self.params["alpha"]
        q = lags.dt**2 / (2.0 * a * ell**2)
        base = (1.0 + q) ** (-a)
        if p == "variance":
            return base
        if p == "lengthscale":
            return v * base / (1.0 + q) * lags.dt**2 / ell**3
        return v * base * (q / (1.0 + q) - np.log1p(q))


class StationMean(BaseKernel):
    """Constant covariance between observations sharing a station id."""

    kind = "station_mean"
    param_names = ("variance",)

    def __init__(self, name="mu", params=None, fixed=frozenset({"variance"}), **kw):
        params = dict(params or {})
        params.update(kw)
        params.setdefault("variance", 100.0)
        super().__init__(name, params, frozenset(fixed))

    def value(self, lags):
        return self.params["variance"] * lags.same_station.astype(float)

    def dparam(self, lags, p):
        return lags.same_station.astype(float)


@dataclass(frozen=True)
class Sum(Kernel):
    children: tuple
    kind = "sum"

    def leaves(self):
        return [leaf for c in self.children for leaf in c.leaves()]

    def value(self, lags):
        out = self.children[0].value(lags)
        for c in self.children[1:]:
            out = out + c.value(lags)
        return out

    def grads(self, lags):
        g = {}
        for c in self.children:
            g.update(c.grads(lags))
        return g

    def map_leaves(self, fn):
        return Sum(tuple(c.map_leaves(fn) for c in self.children))

    def to_dict(self):
        return {"kind": "sum", "children": [c.to_dict() for c in self.children]}


@dataclass(frozen=True)
class Product(Kernel):
    children: tuple
    kind = "product"

    def leaves(self):
        return [leaf for c in self.children for leaf in c.leaves()]

    def value(self, lags):
        out = self.children[0].value(lags)
        for c in self.children[1:]:
            out = out * c.value(lags)
        return out

    def grads(self, lags):
        vals = [c.value(lags) for c in self.children]
        g = {}
        for i, c in enumerate(self.children):
            others = None
            for j, v in enumerate(vals):
                if j != i:
                    others = v if others is None else others * v
            for name, d in c.grads(lags).items():
                g[name] = d if others is None else d * others
        return g

    def map_leaves(self, fn):
        return Product(tuple(c.map_leaves(fn) for c in self.children))

    def to_dict(self):
        return {"kind": "product", "children": [c.to_dict() for c in self.children]}


_BASE_KINDS = {cls.kind: cls for cls in (SESpace, SETime, Periodic24, RQTime, StationMean)}


def validate(k: Kernel) -> Kernel:
    """Check structural invariants: unique node names, StationMean only at top level."""
    names = [leaf.name for leaf in k.leaves()]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise ValueError(f"duplicate kernel node names: {sorted(dup)}")

    def walk(node, top):
        if isinstance(node, StationMean) and not top:
            raise ValueError("StationMean may only appear as a top-level Sum term")
        if isinstance(node, (Sum, Product)):
            if not node.children:
                raise ValueError(f"empty {node.kind} node")
            child_top = isinstance(node, Sum) and top
            for c in node.children:
                walk(c, child_top)
    walk(k, True)
    return k


def from_dict(d: dict) -> Kernel:
    kind = d.get("kind")
    if kind in ("sum", "product"):
        cls = Sum if kind == "sum" else Product
        return validate(cls(tuple(from_dict(c) for c in d["children"])))
    if kind not in _BASE_KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}")
    return _BASE_KINDS[kind](name=d["name"], params=dict(d["params"]),
                             fixed=frozenset(d.get("fixed", ())))


def from_json(text: str) -> Kernel:
    return from_dict(json.loads(text))


@dataclass(frozen=True)
class HyperVector:
    """Named free hyperparameters, stored as log values."""

    names: tuple
    values: np.ndarray
    log_scale: tuple = None

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("hyperparameter names must be unique")
        if len(self.values) != len(self.names):
            raise ValueError("names/values length mismatch")
        if self.log_scale is None:
            object.__setattr__(self, "log_scale", (True,) * len(self.names))

    def as_dict(self) -> dict[str, float]:
        return {n: float(np.exp(v)) for n, v in zip(self.names, self.values)}


# ---------------------------------------------------------------------------
# evaluation API
# ---------------------------------------------------------------------------

def evaluate(k: Kernel, a: Location, b: Location, t: float, u: float) -> float:
    return k.eval(a, b, t, u)


def gram(k: Kernel, points: Points, noise_var: float = 0.0, add_noise: bool = False) -> np.ndarray:
    if len(points) == 0:
        raise ValueError("gram needs at least one point")
    K = k(points)
    if add_noise:
        K[np.diag_indices_from(K)] += noise_var
    return K


def grad_hyper(k: Kernel, a: Location, b: Location, t: float, u: float) -> list[tuple[str, float]]:
    lags = Lags(Points.at(a, [t]), Points.at(b, [u]))
    g = k.grads(lags)
    return [(name, float(g[name][0, 0])) for name in k.hyper_names()]


def strip_station_mean(k: Kernel) -> Kernel:
    if isinstance(k, StationMean):
        raise ValueError("kernel consists only of a StationMean term")
    if isinstance(k, Sum):
        kept = tuple(c for c in k.children if not isinstance(c, StationMean))
        return kept[0] if len(kept) == 1 else Sum(kept)
    return k


def model_variogram(k: Kernel, noise_var: float, h, r):
    """Semi-variogram ``noise_var + k(0,0) - k(h, r)`` of a stationary kernel."""
    if k.has_station_mean():
        raise ValueError("strip the StationMean term before computing a variogram")
    k0 = k.value(Lags.from_separation(0.0, 0.0))
    khr = k.value(Lags.from_separation(h, r))
    return noise_var + k0 - khr


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

# Fitted values reported for the Iowa stations; used as defaults for
# simulation and as optimizer starting points.
FITTED_DEFAULTS = {
    "se_x_se": {"noise_sd": 0.4, "time.variance": 3.7**2, "time.lengthscale": 2.7,
                "space.lengthscale": 176.0},
    "diurnal": {"noise_sd": 0.4, "time.variance": 3.1**2, "time.lengthscale": 2.8,
                "space.lengthscale": 154.0, "diurnal.variance": 2.4**2,
                "diurnal.lengthscale": 0.7, "space24.lengthscale": 1414.0},
    "sumprod": {"noise_sd": 0.2,
                "time1.variance": 0.5**2, "time1.lengthscale": 0.3, "time1.alpha": 0.3,
                "space1.lengthscale": 10.0,
                "time2.variance": 0.9**2, "time2.lengthscale": 1.9, "time2.alpha": 1.1,
                "space2.lengthscale": 59.0,
                "time3.variance": 4.4**2, "time3.lengthscale": 8.9, "time3.alpha": 0.3,
                "space3.lengthscale": 370.0,
                "diurnal.variance": 2.7**2, "diurnal.lengthscale": 0.8,
                "space24.lengthscale": 785.0},
}

PRESETS = tuple(FITTED_DEFAULTS)
STATION_MEAN_SD = 10.0


def preset(name: str, **overrides) -> Kernel:
    """Named kernel structure, initialised with the reported fitted values.

    ``overrides`` maps hyperparameter names (``"time.lengthscale"`` ...) to raw
    values. Spatial variances are fixed at 1, the station-mean variance at
    ``10**2``.
    """
    if name not in FITTED_DEFAULTS:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    vals = {k: v for k, v in FITTED_DEFAULTS[name].items() if k != "noise_sd"}
    mu = StationMean("mu", variance=STATION_MEAN_SD**2)
    if name == "se_x_se":
        k = Sum((Product((SETime("time", variance=vals["time.variance"],
                                 lengthscale=vals["time.lengthscale"]),
                          SESpace("space", lengthscale=vals["space.lengthscale"]))), mu))
    elif name == "diurnal":
        k = Sum((Product((SETime("time", variance=vals["time.variance"],
                                 lengthscale=vals["time.lengthscale"]),
                          SESpace("space", lengthscale=vals["space.lengthscale"]))),
                 _diurnal_term(vals), mu))
    else:
        terms = []
        for i in (1, 2, 3):
            terms.append(Product((
                RQTime(f"time{i}", variance=vals[f"time{i}.variance"],
                       lengthscale=vals[f"time{i}.lengthscale"], alpha=vals[f"time{i}.alpha"]),
                SESpace(f"space{i}", lengthscale=vals[f"space{i}.lengthscale"]))))
        k = Sum(tuple(terms) + (_diurnal_term(vals), mu))
    if overrides:
        k = k.with_hyper(overrides)
    return validate(k)


def _diurnal_term(vals):
    return Product((Periodic24("diurnal", variance=vals["diurnal.variance"],
                               lengthscale=vals["diurnal.lengthscale"]),
                    SESpace("space24", lengthscale=vals["space24.lengthscale"])))


def preset_noise_var(name: str) -> float:
    return FITTED_DEFAULTS[name]["noise_sd"] ** 2


def time_space_terms(k: Kernel) -> list[tuple[list[BaseKernel], list[BaseKernel]]]:
    """Decompose a Sum of Products into (time factors, space factors) per term.

    StationMean terms are skipped. Raises if a term mixes anything else.
    """
    terms = k.children if isinstance(k, Sum) else (k,)
    out = []
    for term in terms:
        if isinstance(term, StationMean):
            continue
        factors = term.children if isinstance(term, Product) else (term,)
        tf, sf = [], []
        for f in factors:
            if isinstance(f, (SETime, Periodic24, RQTime)):
                tf.append(f)
            elif isinstance(f, SESpace):
                sf.append(f)
            else:
                raise ValueError(f"cannot separate factor of kind {f.kind}")
        out.append((tf, sf))
    return out
