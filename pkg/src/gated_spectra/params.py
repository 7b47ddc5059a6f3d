"""Hyperparameters of randomly initialised gated networks and their nonlinearities."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping

import numpy as np
from scipy.special import expit

from .errors import ParameterError


class Arch(str, Enum):
    GRU = "gru"
    LSTM = "lstm"
    VANILLA = "vanilla"


class Activation(str, Enum):
    TANH = "tanh"
    HARD_TANH = "hardtanh"


GATE_LABELS = {
    Arch.GRU: ("z", "r", "h"),
    Arch.LSTM: ("f", "i", "o", "h"),
    Arch.VANILLA: ("h",),
}


def sigmoid(x):
    return expit(x)


def sigmoid_prime(x):
    s = expit(x)
    return s * (1.0 - s)


def hard_tanh(x):
    """Clamp to [-1, 1]."""
    return np.clip(x, -1.0, 1.0)


def hard_tanh_prime(x):
    """Indicator of the open interval (-1, 1); zero on the kinks."""
    x = np.asarray(x, dtype=float)
    out = (np.abs(x) < 1.0).astype(float)
    return out if out.ndim else float(out)


def tanh_prime(x):
    t = np.tanh(x)
    return 1.0 - t * t


_PHI = {
    Activation.TANH: (np.tanh, tanh_prime),
    Activation.HARD_TANH: (hard_tanh, hard_tanh_prime),
}


def activation_functions(activation):
    """Return ``(phi, phi_prime)`` for an :class:`Activation`."""
    return _PHI[Activation(activation)]


@dataclass(frozen=True)
class GatedNetParams:
    """Gains ``a_k``, bias means ``b_k`` and bias variances ``v_k`` per gate.

    Weights are drawn ``U_k[i, j] ~ N(0, a_k**2 / n)`` and biases
    ``b_k[i] ~ N(b_k, v_k)``.  Use :meth:`gru`, :meth:`lstm` or
    :meth:`vanilla` rather than building the maps by hand.
    """

    arch: Arch
    n: int
    gains: Mapping[str, float]
    bias_means: Mapping[str, float] = field(default_factory=dict)
    bias_vars: Mapping[str, float] = field(default_factory=dict)
    activation: Activation = Activation.TANH

    def __post_init__(self):
        object.__setattr__(self, "arch", Arch(self.arch))
        object.__setattr__(self, "activation", Activation(self.activation))
        labels = GATE_LABELS[self.arch]
        for name in ("gains", "bias_means", "bias_vars"):
            given = dict(getattr(self, name))
            extra = set(given) - set(labels)
            if extra:
                raise ParameterError(
                    f"{name} has labels {sorted(extra)} not valid for {self.arch.value}"
                )
            if name == "gains" and set(given) != set(labels):
                raise ParameterError(
                    f"gains must define exactly {labels} for {self.arch.value}, got {sorted(given)}"
                )
            full = {k: float(given.get(k, 0.0)) for k in labels}
            object.__setattr__(self, name, full)
        if int(self.n) != self.n or self.n < 2:
            raise ParameterError(f"n must be an integer >= 2, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        for k, a in self.gains.items():
            if not np.isfinite(a) or a < 0:
                raise ParameterError(f"gain a_{k} must be finite and >= 0, got {a}")
        for k, v in self.bias_vars.items():
            if not np.isfinite(v) or v < 0:
                raise ParameterError(f"bias variance v_{k} must be finite and >= 0, got {v}")
        for k, b in self.bias_means.items():
            if np.isnan(b):
                raise ParameterError(f"bias mean b_{k} is NaN")

    @classmethod
    def gru(cls, n=1000, a_h=3.0, a_z=0.0, a_r=0.0, b_z=0.0, b_r=0.0, b_h=0.0,
            v_z=0.0, v_r=0.0, v_h=0.0, activation=Activation.TANH):
        return cls(Arch.GRU, n, {"z": a_z, "r": a_r, "h": a_h},
                   {"z": b_z, "r": b_r, "h": b_h}, {"z": v_z, "r": v_r, "h": v_h},
                   activation)

    @classmethod
    def lstm(cls, n=1000, a_h=3.0, a_f=0.0, a_i=0.0, a_o=0.0, b_f=0.0, b_i=0.0,
             b_o=0.0, b_h=0.0, v_f=0.0, v_i=0.0, v_o=0.0, v_h=0.0,
             activation=Activation.TANH):
        return cls(Arch.LSTM, n, {"f": a_f, "i": a_i, "o": a_o, "h": a_h},
                   {"f": b_f, "i": b_i, "o": b_o, "h": b_h},
                   {"f": v_f, "i": v_i, "o": v_o, "h": v_h}, activation)

    @classmethod
    def vanilla(cls, n=1000, a_h=1.0, b_h=0.0, v_h=0.0, activation=Activation.TANH):
        return cls(Arch.VANILLA, n, {"h": a_h}, {"h": b_h}, {"h": v_h}, activation)

    @property
    def labels(self):
        return GATE_LABELS[self.arch]

    def a(self, k):
        return self.gains[k]

    def b(self, k):
        return self.bias_means[k]

    def v(self, k):
        return self.bias_vars[k]

    def with_gains(self, **gains):
        return replace(self, gains={**self.gains, **gains})

    def with_biases(self, **biases):
        return replace(self, bias_means={**self.bias_means, **biases})

    def with_n(self, n):
        return replace(self, n=n)

    def phi(self):
        return activation_functions(self.activation)

    def to_dict(self):
        return {
            "arch": self.arch.value,
            "n": self.n,
            "gains": dict(self.gains),
            "bias_means": dict(self.bias_means),
            "bias_vars": dict(self.bias_vars),
            "activation": self.activation.value,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["arch"], d["n"], d["gains"], d.get("bias_means", {}),
                   d.get("bias_vars", {}), d.get("activation", "tanh"))

    def tag(self):
        """Short deterministic tag used in output file names."""
        gates = "_".join(f"a{k}{_fmt(self.gains[k])}" for k in self.labels if k != "h")
        return f"{self.arch.value}_{_fmt(self.gains['h'])}_{gates or 'nogates'}"


def _fmt(x):
    return f"{x:g}".replace("-", "m").replace(".", "p")


def check_params(params, arch=None):
    if not isinstance(params, GatedNetParams):
        raise ParameterError(f"expected GatedNetParams, got {type(params).__name__}")
    if arch is not None and params.arch != Arch(arch):
        raise ParameterError(f"expected {Arch(arch).value} parameters, got {params.arch.value}")
    return params
