"""Sampling, stepping and differentiating random GRU / LSTM networks.

Inputs are fixed to zero; a constant input is represented through the bias
means.  Every state object carries the previous hidden (and cell) state so the
Jacobian at time t can be assembled from matched time indices.
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import DivergenceError, ParameterError, ShapeError
from .params import Arch, GatedNetParams, check_params, sigmoid

_MASK64 = (1 << 64) - 1
_KIND = {"weight": 0, "bias": 1, "init": 2}


def _rng(seed, kind, label=""):
    """Counter-based (Philox) stream keyed by (seed, kind, gate label)."""
    ss = np.random.SeedSequence(
        int(seed) & _MASK64, spawn_key=(_KIND[kind], sum(ord(c) << (8 * i) for i, c in enumerate(label)))
    )
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class NetworkRealization:
    params: GatedNetParams
    weights: dict
    biases: dict
    seed: int

    @property
    def n(self):
        return self.params.n

    @property
    def arch(self):
        return self.params.arch


def sample_network(params: GatedNetParams, seed: int) -> NetworkRealization:
    """Draw ``U_k`` and ``b_k`` for every gate; deterministic in ``(params, seed)``."""
    check_params(params)
    n = params.n
    weights, biases = {}, {}
    for k in params.labels:
        a = params.a(k)
        if a == 0.0:
            weights[k] = np.zeros((n, n))
        else:
            weights[k] = _rng(seed, "weight", k).standard_normal((n, n)) * (a / np.sqrt(n))
        v = params.v(k)
        b = np.full(n, params.b(k))
        if v > 0.0:
            b = b + np.sqrt(v) * _rng(seed, "bias", k).standard_normal(n)
        biases[k] = b
    return NetworkRealization(params, weights, biases, int(seed))


# --------------------------------------------------------------------------
# states


@dataclass(frozen=True)
class GruState:
    h: np.ndarray
    z: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    zprime: Optional[np.ndarray] = None
    rprime: Optional[np.ndarray] = None
    h_prev: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, h0):
        return cls(h=np.asarray(h0, dtype=float).copy())


@dataclass(frozen=True)
class LstmState:
    h: np.ndarray
    c: np.ndarray
    f: Optional[np.ndarray] = None
    i: Optional[np.ndarray] = None
    o: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    fprime: Optional[np.ndarray] = None
    iprime: Optional[np.ndarray] = None
    oprime: Optional[np.ndarray] = None
    m: Optional[np.ndarray] = None
    h_prev: Optional[np.ndarray] = None
    c_prev: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, h0, c0=None):
        h0 = np.asarray(h0, dtype=float).copy()
        c0 = np.zeros_like(h0) if c0 is None else np.asarray(c0, dtype=float).copy()
        return cls(h=h0, c=c0)


@dataclass(frozen=True)
class VanillaState:
    h: np.ndarray
    x: Optional[np.ndarray] = None
    h_prev: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, h0):
        return cls(h=np.asarray(h0, dtype=float).copy())


def _check_dim(net, *vectors):
    for v in vectors:
        if v is None or np.shape(v) != (net.n,):
            raise ShapeError(f"state vector has shape {np.shape(v)}, network has n={net.n}")


def _check_arch(net, arch):
    if net.arch != arch:
        raise ParameterError(f"network is {net.arch.value}, expected {arch.value}")


def step_gru(net: NetworkRealization, state: GruState) -> GruState:
    _check_arch(net, Arch.GRU)
    h = state.h
    _check_dim(net, h)
    W, b = net.weights, net.biases
    phi, _ = net.params.phi()
    z = sigmoid(W["z"] @ h + b["z"])
    r = sigmoid(W["r"] @ h + b["r"])
    y = W["h"] @ (r * h) + b["h"]
    h_new = z * h + (1.0 - z) * phi(y)
    return GruState(h=h_new, z=z, r=r, y=y, zprime=z * (1.0 - z), rprime=r * (1.0 - r), h_prev=h)


def step_lstm(net: NetworkRealization, state: LstmState) -> LstmState:
    _check_arch(net, Arch.LSTM)
    h, c = state.h, state.c
    _check_dim(net, h, c)
    W, b = net.weights, net.biases
    phi, dphi = net.params.phi()
    f = sigmoid(W["f"] @ h + b["f"])
    i = sigmoid(W["i"] @ h + b["i"])
    o = sigmoid(W["o"] @ h + b["o"])
    y = W["h"] @ h + b["h"]
    c_new = f * c + i * phi(y)
    h_new = o * phi(c_new)
    return LstmState(h=h_new, c=c_new, f=f, i=i, o=o, y=y, fprime=f * (1.0 - f),
                     iprime=i * (1.0 - i), oprime=o * (1.0 - o), m=o * dphi(c_new),
                     h_prev=h, c_prev=c)


def step_vanilla(net: NetworkRealization, state: VanillaState) -> VanillaState:
    _check_arch(net, Arch.VANILLA)
    _check_dim(net, state.h)
    phi, _ = net.params.phi()
    x = net.weights["h"] @ state.h + net.biases["h"]
    return VanillaState(h=phi(x), x=x, h_prev=state.h)


_STEP = {Arch.GRU: step_gru, Arch.LSTM: step_lstm, Arch.VANILLA: step_vanilla}
_INIT = {Arch.GRU: GruState.initial, Arch.LSTM: LstmState.initial, Arch.VANILLA: VanillaState.initial}


def step(net, state):
    return _STEP[net.arch](net, state)


def initial_state(net, h0=None, seed=0):
    """``h0`` defaults to i.i.d. ``N(0, 0.25)`` drawn from the seed's init stream."""
    if h0 is None:
        h0 = 0.5 * _rng(seed, "init").standard_normal(net.n)
    return _INIT[net.arch](h0)


@dataclass
class Trajectory:
    """Collected states after burn-in plus the windowed stationarity diagnostic."""

    states: list
    mean_sq: np.ndarray  # E[h^2] over neurons, per collected step
    nonstationary: bool
    drift: float
    burn_in: int
    collect: int
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def last(self):
        return self.states[-1]


def run_to_steady(net: NetworkRealization, burn_in: int = 500, collect: int = 500,
                  seed: int = 0, h0=None, keep: Optional[int] = None,
                  drift_tol: float = 0.05) -> Trajectory:
    """Iterate the network, discard ``burn_in`` steps and return the next ``collect``.

    ``keep`` limits how many of the collected states are retained (the last
    ones); the stationarity check always uses the whole window.
    """
    if burn_in < 1 or collect < 1:
        raise ParameterError("burn_in and collect must be >= 1")
    state = initial_state(net, h0, seed)
    stepper = _STEP[net.arch]
    keep = collect if keep is None else int(keep)
    states = []
    mean_sq = np.empty(collect)
    for t in range(burn_in + collect):
        state = stepper(net, state)
        if not np.all(np.isfinite(state.h)):
            raise DivergenceError(f"non-finite hidden state at step {t + 1}", step=t + 1)
        if t >= burn_in:
            j = t - burn_in
            mean_sq[j] = float(np.mean(state.h ** 2))
            if j >= collect - keep:
                states.append(state)
    half = collect // 2
    drift = 0.0
    nonstationary = False
    if half >= 1:
        m1, m2 = mean_sq[:half].mean(), mean_sq[half:].mean()
        scale = max(m1, m2)
        if scale > 1e-12:
            drift = abs(m1 - m2) / scale
            nonstationary = drift > drift_tol
    return Trajectory(states, mean_sq, nonstationary, drift, burn_in, collect, seed)


# --------------------------------------------------------------------------
# Jacobians


def _need_prev(state, *names):
    for name in names:
        if getattr(state, name) is None:
            raise ShapeError(f"state lacks '{name}'; pass a state produced by a step function")


def jacobian_gru(net: NetworkRealization, state: GruState) -> np.ndarray:
    """``dh_t / dh_{t-1}`` as a dense n x n array."""
    _check_arch(net, Arch.GRU)
    _need_prev(state, "h_prev", "z", "r", "y")
    _check_dim(net, state.h, state.h_prev)
    W = net.weights
    phi, dphi = net.params.phi()
    hp, z, r, y = state.h_prev, state.z, state.r, state.y
    inner = np.diag(r) + (hp * state.rprime)[:, None] * W["r"]
    J = (((1.0 - z) * dphi(y))[:, None] * W["h"]) @ inner
    J += ((hp - phi(y)) * state.zprime)[:, None] * W["z"]
    J[np.diag_indices_from(J)] += z
    return J


def jacobian_lstm(net: NetworkRealization, state: LstmState) -> np.ndarray:
    """``d(c_t, h_t) / d(c_{t-1}, h_{t-1})`` as a dense 2n x 2n array."""
    _check_arch(net, Arch.LSTM)
    _need_prev(state, "h_prev", "c_prev", "f", "i", "o", "y")
    _check_dim(net, state.h, state.c, state.h_prev, state.c_prev)
    n = net.n
    W = net.weights
    phi, dphi = net.params.phi()
    f, m = state.f, state.m
    g = ((state.fprime * state.c_prev)[:, None] * W["f"]
         + (state.i * dphi(state.y))[:, None] * W["h"]
         + (state.iprime * phi(state.y))[:, None] * W["i"])
    J = np.zeros((2 * n, 2 * n))
    idx = np.arange(n)
    J[idx, idx] = f
    J[:n, n:] = g
    J[n + idx, idx] = m * f
    J[n:, n:] = (state.oprime * phi(state.c))[:, None] * W["o"] + m[:, None] * g
    return J


def jacobian_vanilla(net: NetworkRealization, state: VanillaState) -> np.ndarray:
    _check_arch(net, Arch.VANILLA)
    _need_prev(state, "x")
    _, dphi = net.params.phi()
    return dphi(state.x)[:, None] * net.weights["h"]


_JAC = {Arch.GRU: jacobian_gru, Arch.LSTM: jacobian_lstm, Arch.VANILLA: jacobian_vanilla}


def jacobian(net, state):
    return _JAC[net.arch](net, state)


@dataclass(frozen=True)
class ExtendedJacobian:
    """Linearisation on (h, r, z); ``lambda_rows`` marks rows scaled by lambda.

    Eigenvalues of the GRU Jacobian solve ``m @ v = I_lambda @ v`` with
    ``I_lambda = diag(where(lambda_rows, lambda, 1))``.
    """

    m: np.ndarray
    lambda_rows: np.ndarray

    def selector(self, lam):
        return np.diag(np.where(self.lambda_rows, lam, 1.0))

    def eigenvalues(self):
        """Finite generalised eigenvalues of ``(m - D_fixed, D_lambda)``."""
        d_lam = np.diag(self.lambda_rows.astype(float))
        d_fix = np.diag((~self.lambda_rows).astype(float))
        w = scipy.linalg.eigvals(self.m - d_fix, d_lam)
        return w[np.isfinite(w)]


def extended_jacobian_gru(net: NetworkRealization, state: GruState) -> ExtendedJacobian:
    _check_arch(net, Arch.GRU)
    _need_prev(state, "h_prev", "z", "r", "y")
    n = net.n
    W = net.weights
    phi, dphi = net.params.phi()
    hp, z, y = state.h_prev, state.z, state.y
    left = ((1.0 - z) * dphi(y))[:, None] * W["h"]
    M = np.zeros((3 * n, 3 * n))
    M[:n, :n] = left * state.r[None, :]
    M[:n, :n][np.diag_indices(n)] += z
    M[:n, n:2 * n] = left * hp[None, :]
    M[:n, 2 * n:] = np.diag(hp - phi(y))
    M[n:2 * n, :n] = state.rprime[:, None] * W["r"]
    M[2 * n:, :n] = state.zprime[:, None] * W["z"]
    rows = np.zeros(3 * n, dtype=bool)
    rows[:n] = True
    return ExtendedJacobian(M, rows)


# --------------------------------------------------------------------------
# serialisation


def _encode(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d):
    if d.get("dtype") != "<f8":
        raise ParameterError(f"unsupported dtype {d.get('dtype')!r}; expected little-endian float64")
    return np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").reshape(d["shape"]).astype(float)


def realization_to_json(net: NetworkRealization) -> str:
    """JSON container; arrays are base64 little-endian IEEE-754 float64, row-major."""
    return json.dumps({
        "format": "gated-spectra/realization",
        "version": 1,
        "endianness": "little",
        "params": net.params.to_dict(),
        "seed": net.seed,
        "weights": {k: _encode(v) for k, v in net.weights.items()},
        "biases": {k: _encode(v) for k, v in net.biases.items()},
    })


def realization_from_json(text: str) -> NetworkRealization:
    d = json.loads(text)
    params = GatedNetParams.from_dict(d["params"])
    weights = {k: _decode(v) for k, v in d["weights"].items()}
    biases = {k: _decode(v) for k, v in d["biases"].items()}
    return NetworkRealization(params, weights, biases, int(d["seed"]))
