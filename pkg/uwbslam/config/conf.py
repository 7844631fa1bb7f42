"""

Copyright (c) 2024 The uwbslam Project

Permission is hereby granted, free of charge, to any person obtaining a copy
of this software and associated documentation files (the "Software"), to deal
in the Software without restriction, including without limitation the rights
to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
copies of the Software, and to permit persons to whom the Software is
furnished to do so, subject to the following conditions:

The above copyright notice and this permission notice shall be included in all
copies or substantial portions of the Software.

THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
SOFTWARE.
"""
import sys
import logging
import math
from abc import abstractmethod, ABCMeta
from typing import Any, Dict, Mapping, Tuple

import numpy as np

from ._constants import HEADER_BYTES

__all__ = [
    "BasicConfig",
    "ParameterError",
    "NoiseConfig",
    "ScenarioConfig",
    "SearchConfig",
    "EstimatorConfig",
    "PcmConfig",
    "DpgoConfig",
    "NetConfig",
    "PipelineConfig",
]

_TRUE = {"1", "yes", "true", "on"}
_FALSE = {"0", "no", "false", "off"}


class ParameterError(ValueError):
    def __init__(self, name: str, value: Any, expected: str):
        self.name = name
        self.value = value
        super().__init__(f"Invalid value {value!r} for <{name}>: expected {expected}.")


def _coerce(default, text: str):
    """Converts an INI string to the type of ``default``."""
    if isinstance(default, bool):
        lowered = text.strip().lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"{text!r} is not a boolean")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        item_type = type(default[0]) if default else float
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(item_type(p) if item_type is not int else int(float(p)) for p in parts)
    return text.strip()


class BasicConfig(metaclass=ABCMeta):
    """
    Locked key/value configuration.

    Defaults are the public class attributes of the subclass. The only way to
    change a value is ``set_config``, which validates first (``_before``) and
    then notifies the optional hook.
    """

    def __init__(self, hook=None, **kwargs):
        super().__setattr__("_listen", hook)
        super().__setattr__("_fields", tuple(self.defaults().keys()))
        values = self.defaults()
        values.update(kwargs)
        self.set_config(**values)

    def __repr__(self):
        return f"{self.__class__.__name__}({self.get()})"

    def __eq__(self, other):
        if not isinstance(other, BasicConfig):
            return NotImplemented
        return type(self) is type(other) and self.get() == other.get()

    def __setattr__(self, key, value):
        if getattr(self, "_locked", False) is True:
            er = "This is a critical config. You can use <set_config> method."
            raise ValueError(er)
        super().__setattr__(key, value)

    def __unlock(self):
        super().__setattr__("_locked", False)

    def __lock(self):
        super().__setattr__("_locked", True)

    @classmethod
    def defaults(cls) -> Dict[str, Any]:
        values = {}
        for klass in reversed(cls.__mro__):
            for attr_, obj in vars(klass).items():
                if attr_.startswith("_") or callable(obj) or isinstance(obj, (property, classmethod, staticmethod)):
                    continue
                values[attr_] = obj
        return values

    def set_config(self, **kwargs) -> None:
        self._before(kwargs)
        self.__unlock()
        for k, i in kwargs.items():
            self.__setattr__(k, i)
        self.__lock()
        if self._listen is not None:
            self._listen()

    @abstractmethod
    def _before(self, new_config: dict):
        for k in new_config:
            if k not in self._fields:
                raise ValueError(f"<{k}> not in config attrs {self._fields}")

    def _merged(self, new_config: dict) -> dict:
        current = {k: getattr(self, k) for k in self._fields if hasattr(self, k)}
        current.update(new_config)
        return current

    def get(self, item=None):
        if item is None:
            return {k: getattr(self, k) for k in self._fields}
        if item in self._fields:
            return getattr(self, item)
        return {}

    def replace(self, **kwargs) -> "BasicConfig":
        values = self.get()
        values.update(kwargs)
        return type(self)(**values)

    @classmethod
    def from_strings(cls, mapping: Mapping[str, str], base: "BasicConfig" = None) -> "BasicConfig":
        """Builds a config from INI-style string values, on top of ``base`` or the defaults."""
        values = base.get() if base is not None else cls.defaults()
        for key, text in mapping.items():
            if key not in values:
                raise ValueError(f"<{key}> not in config attrs {tuple(values)}")
            try:
                values[key] = _coerce(cls.defaults()[key], text)
            except ValueError:
                raise ParameterError(key, text, f"a value of type {type(cls.defaults()[key]).__name__}")
        return cls(**values)

    def to_strings(self) -> Dict[str, str]:
        out = {}
        for key, value in self.get().items():
            if isinstance(value, BasicConfig):
                continue
            if isinstance(value, tuple):
                out[key] = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                out[key] = repr(value)
            else:
                out[key] = str(value)
        return out


def _positive(name, value):
    if not value > 0:
        raise ParameterError(name, value, "a positive number")


def _non_negative(name, value):
    if not value >= 0:
        raise ParameterError(name, value, "a non-negative number")


def _probability(name, value):
    if not 0 <= value <= 1:
        raise ParameterError(name, value, "a probability in [0, 1]")


def _choice(name, value, options: Tuple[str, ...]):
    if value not in options:
        raise ParameterError(name, value, f"one of {options}")


class NoiseConfig(BasicConfig):
    """Sensor noise and sampling of the simulated robots."""
    odom_trans_sigma = 0.005
    odom_rot_sigma = 0.002
    uwb_sigma = 0.1
    nlos_probability = 0.0
    nlos_bias_scale = 0.3
    max_range = 100.0
    uwb_rate = 50.0
    odom_rate = 10.0
    rng_seed = 0

    def _before(self, new_config: dict):
        super()._before(new_config)
        cfg = self._merged(new_config)
        for name in ("odom_trans_sigma", "odom_rot_sigma", "uwb_sigma", "nlos_bias_scale"):
            _non_negative(name, cfg[name])
        _probability("nlos_probability", cfg["nlos_probability"])
        for name in ("max_range", "uwb_rate", "odom_rate"):
            _positive(name, cfg[name])
        ratio = cfg["uwb_rate"] / cfg["odom_rate"]
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
            raise ParameterError("odom_rate", cfg["odom_rate"], "a rate dividing uwb_rate")

    @property
    def odom_step(self) -> int:
        """Number of UWB periods per odometry period."""
        return int(round(self.uwb_rate / self.odom_rate))


class ScenarioConfig(BasicConfig):
    n_robots = 3
    duration = 300.0
    speed_limit = 0.2
    arena_width = 10.0
    arena_height = 12.0
    seed = 42
    dataset = ""

    def _before(self, new_config: dict):
        super()._before(new_config)
        cfg = self._merged(new_config)
        if int(cfg["n_robots"]) < 2:
            raise ParameterError("n_robots", cfg["n_robots"], "at least 2 robots")
        for name in ("duration", "arena_width", "arena_height"):
            _positive(name, cfg[name])
        _non_negative("speed_limit", cfg["speed_limit"])


class SearchConfig(BasicConfig):
    """Polar grid of the coarse search: ``w = ceil(pi / delta)`` steps each side."""
    delta = 0.1
    radius_mode = "latest"

    def _before(self, new_config: dict):
        super()._before(new_config)
        cfg = self._merged(new_config)
        if not 0 < cfg["delta"] <= math.pi:
            raise ParameterError("delta", cfg["delta"], "an angular step in (0, pi]")
        _choice("radius_mode", cfg["radius_mode"], ("latest", "median"))

    @property
    def w(self) -> int:
        return int(math.ceil(math.pi / self.delta))

    @property
    def size(self) -> int:
        return 2 * self.w + 1


class EstimatorConfig(BasicConfig):
    tau = 50
    tau_unit = "samples"
    min_window = 10
    min_excitation = 0.2
    mode = "combined"
    refine_significance = 0.01
    ambiguity_ratio = 1.0
    ambiguity_separation = 1.0
    ambiguity_floor = 1e-4
    sigma_t = 0.5
    sigma_theta = 0.15
    huber_k = 0.0
    max_iterations = 100
    step_tolerance = 1e-8
    cost_tolerance = 1e-10
    early_abort = True
    chunk_size = 8

    def _before(self, new_config: dict):
        super()._before(new_config)
        cfg = self._merged(new_config)
        _positive("tau", cfg["tau"])
        _choice("tau_unit", cfg["tau_unit"], ("samples", "seconds"))
        if int(cfg["min_window"]) < 1:
            raise ParameterError("min_window", cfg["min_window"], "at least one sample")
        _non_negative("min_excitation", cfg["min_excitation"])
        _choice("mode", cfg["mode"], ("combined", "coarse", "nls"))
        if not 0 < cfg["refine_significance"] < 1:
            raise ParameterError("refine_significance", cfg["refine_significance"], "a significance level in (0, 1)")
        _non_negative("ambiguity_ratio", cfg["ambiguity_ratio"])
        _positive("ambiguity_separation", cfg["ambiguity_separation"])
        _non_negative("ambiguity_floor", cfg["ambiguity_floor"])
        _positive("sigma_t", cfg["sigma_t"])
        _positive("sigma_theta", cfg["sigma_theta"])
        _non_negative("huber_k", cfg["huber_k"])
        _positive("max_iterations", cfg["max_iterations"])
        _positive("chunk_size", cfg["chunk_size"])

    def window_samples(self, uwb_rate: float) -> int:
        if self.tau_unit == "seconds":
            return max(1, int(round(self.tau * uwb_rate)))
        return int(self.tau)

    def covariance(self) -> np.ndarray:
        return np.diag([self.sigma_t ** 2, self.sigma_t ** 2, self.sigma_theta ** 2])


class PcmConfig(BasicConfig):
    """
    Pairwise consistency gate. ``sigma_*`` are standard deviations of the cycle
    residual; the gate is ``mahalanobis(cycle, diag(sigma**2))**2 <= chi2(1 - epsilon, dof)``.
    """
    epsilon = 0.1
    dof = 3
    sigma_x = 0.5
    sigma_y = 0.5
    sigma_theta = 0.15
    exact_cap = 60
    heuristic_restarts = 16

    def _before(self, new_config: dict):
        super()._before(new_config)
        cfg = self._merged(new_config)
        if not 0 < cfg["epsilon"] < 1:
            raise ParameterError("epsilon", cfg["epsilon"], "a significance level in (0, 1)")
        if cfg["dof"] != 3:
            raise ParameterError("dof", cfg["dof"], "3 (an SE(2) residual)")
        for name in ("sigma_x", "sigma_y", "sigma_theta", "exact_cap", "heuristic_restarts"):
            _positive(name, cfg[name])

    def covariance(self) -> np.ndarray:
        return np.diag([self.sigma_x ** 2, self.sigma_y ** 2, self.sigma_theta ** 2])

    def threshold(self) -> float:
        from ..geometry import chi2_quantile
        return chi2_quantile(self.epsilon, self.dof)


class DpgoConfig(BasicConfig):
    max_rounds = 1000
    tolerance = 1e-6
    update_rate = 1.0
    damping = 1e-4
    keyframe_stride = 1
    inner_iterations = 10
    max_retries = 2
    finalize = True
    sigma_floor = 1e-3

    def _before(self, new_config: dict):
        super()._before(new_config)
        cfg = self._merged(new_config)
        for name in ("max_rounds", "tolerance", "update_rate", "damping", "keyframe_stride",
                     "inner_iterations", "sigma_floor"):
            _positive(name, cfg[name])
        _non_negative("max_retries", cfg["max_retries"])


class NetConfig(BasicConfig):
    comm_range = 100.0
    latency = 0.0
    drop_probability = 0.0
    seed = 0
    ttl = 10.0
    header_bytes = HEADER_BYTES

    def _before(self, new_config: dict):
        super()._before(new_config)
        cfg = self._merged(new_config)
        _positive("comm_range", cfg["comm_range"])
        _non_negative("latency", cfg["latency"])
        _probability("drop_probability", cfg["drop_probability"])
        _positive("ttl", cfg["ttl"])
        _non_negative("header_bytes", cfg["header_bytes"])


class PipelineConfig(BasicConfig):
    """Per-robot pipeline settings; nested configs default to their own defaults."""
    estimate_period = 1.0
    parallel = False
    search = None
    estimator = None
    pcm = None
    dpgo = None

    def __init__(self, hook=None, **kwargs):
        kwargs["search"] = kwargs.get("search") or SearchConfig()
        kwargs["estimator"] = kwargs.get("estimator") or EstimatorConfig()
        kwargs["pcm"] = kwargs.get("pcm") or PcmConfig()
        kwargs["dpgo"] = kwargs.get("dpgo") or DpgoConfig()
        super().__init__(hook=hook, **kwargs)

    def _before(self, new_config: dict):
        super()._before(new_config)
        cfg = self._merged(new_config)
        _positive("estimate_period", cfg["estimate_period"])
        for name, kind in (("search", SearchConfig), ("estimator", EstimatorConfig),
                           ("pcm", PcmConfig), ("dpgo", DpgoConfig)):
            if cfg[name] is not None and not isinstance(cfg[name], kind):
                raise ParameterError(name, cfg[name], f"a {kind.__name__}")

    @property
    def tau(self) -> int:
        return self.estimator.tau

    @property
    def delta(self) -> float:
        return self.search.delta


console_logger = logging.StreamHandler(sys.stdout)
logging.basicConfig(handlers=(console_logger,), level=logging.INFO)
