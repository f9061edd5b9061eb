"""Recurrent state-space neural network structures.

Two model kinds are implemented:

* ``SsnnModel`` — state and output maps are one-hidden-layer networks:

      x(k+1) = W_x sigma(W_fx x(k) + W_fu u(k) + b_f) + b_x
      y(k)   = W_y sigma(W_gx x(k) + W_gu u(k) + b_g) + b_y

* ``GrSsnnModel`` — the same with a fully connected linear (A, B, C, D)
  term in parallel to each nonlinear branch (a generalized residual
  connection):

      x(k+1) = A x(k) + B u(k) + W_x sigma(...) + b_x
      y(k)   = C x(k) + D u(k) + W_y sigma(...) + b_y

The module provides forward simulation, a bijective flattening of all
trainable parameters, and the exact Jacobian of the simulated output with
respect to the flattened parameters (chain rule through the unrolled
recursion, i.e. backpropagation through time).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .lti import LtiStateSpace
from .signals import as_2d

__all__ = [
    "ACTIVATION_KINDS",
    "Activation",
    "Dims",
    "SsnnModel",
    "GrSsnnModel",
    "SimulationDiverged",
    "Layout",
    "ParamVector",
    "STATE_BOUND",
    "simulate",
    "pack",
    "unpack",
    "layout_for",
    "jacobian_bptt",
    "save_model",
    "load_model",
]

ACTIVATION_KINDS = ("tanh", "gaussian-rbf", "relu")

# forward simulation aborts once any |state| exceeds this bound
STATE_BOUND = 1e6

LAYOUT_VERSION = 1


class SimulationDiverged(RuntimeError):
    """Raised when the recursion produces a non-finite or runaway state."""

    def __init__(self, sample_index):
        super().__init__(f"simulation diverged at sample {sample_index}")
        self.sample_index = sample_index


@dataclass(frozen=True)
class Activation:
    """Elementwise activation with an exact derivative."""

    kind: str = "tanh"

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {self.kind!r}; "
                             f"choose one of {ACTIVATION_KINDS}")

    def f(self, z):
        if self.kind == "tanh":
            return np.tanh(z)
        if self.kind == "gaussian-rbf":
            return np.exp(-z * z)
        return np.maximum(z, 0.0)

    def f_df(self, z):
        """Return (value, derivative) in one pass."""
        if self.kind == "tanh":
            h = np.tanh(z)
            return h, 1.0 - h * h
        if self.kind == "gaussian-rbf":
            h = np.exp(-z * z)
            return h, -2.0 * z * h
        return np.maximum(z, 0.0), (z > 0.0).astype(float)


class Dims(NamedTuple):
    n_x: int
    n_u: int
    n_y: int
    n_n: int


def _check_branch_shapes(m, n_x, n_u, n_y, n_n):
    expected = {
        "w_x": (n_x, n_n), "w_fx": (n_n, n_x), "w_fu": (n_n, n_u),
        "b_f": (n_n,), "b_x": (n_x,),
        "w_y": (n_y, n_n), "w_gx": (n_n, n_x), "w_gu": (n_n, n_u),
        "b_g": (n_n,), "b_y": (n_y,),
    }
    for name, shape in expected.items():
        got = getattr(m, name).shape
        if got != shape:
            raise ValueError(f"{name} has shape {got}, expected {shape}")


def _coerce_weights(m):
    for name in ("w_x", "w_fx", "w_fu", "w_y", "w_gx", "w_gu"):
        setattr(m, name, np.atleast_2d(np.asarray(getattr(m, name), dtype=float)))
    for name in ("b_f", "b_x", "b_g", "b_y"):
        setattr(m, name, np.atleast_1d(np.asarray(getattr(m, name), dtype=float)))


@dataclass
class SsnnModel:
    w_x: np.ndarray
    w_fx: np.ndarray
    w_fu: np.ndarray
    b_f: np.ndarray
    b_x: np.ndarray
    w_y: np.ndarray
    w_gx: np.ndarray
    w_gu: np.ndarray
    b_g: np.ndarray
    b_y: np.ndarray
    activation: Activation = Activation("tanh")

    def __post_init__(self):
        _coerce_weights(self)
        n_x, n_n = self.w_x.shape
        n_u = self.w_fu.shape[1]
        n_y = self.w_y.shape[0]
        if n_n < 1:
            raise ValueError("need at least one neuron")
        _check_branch_shapes(self, n_x, n_u, n_y, n_n)

    @property
    def dims(self) -> Dims:
        return Dims(self.w_x.shape[0], self.w_fu.shape[1],
                    self.w_y.shape[0], self.w_x.shape[1])


@dataclass
class GrSsnnModel:
    lin: LtiStateSpace
    w_x: np.ndarray
    w_fx: np.ndarray
    w_fu: np.ndarray
    b_f: np.ndarray
    b_x: np.ndarray
    w_y: np.ndarray
    w_gx: np.ndarray
    w_gu: np.ndarray
    b_g: np.ndarray
    b_y: np.ndarray
    activation: Activation = Activation("tanh")

    def __post_init__(self):
        _coerce_weights(self)
        n_x, n_n = self.w_x.shape
        n_u = self.w_fu.shape[1]
        n_y = self.w_y.shape[0]
        if n_n < 1:
            raise ValueError("need at least one neuron")
        _check_branch_shapes(self, n_x, n_u, n_y, n_n)
        if (self.lin.n_x, self.lin.n_u, self.lin.n_y) != (n_x, n_u, n_y):
            raise ValueError(
                f"linear part dims ({self.lin.n_x}, {self.lin.n_u}, {self.lin.n_y}) "
                f"do not match the nonlinear branch ({n_x}, {n_u}, {n_y})"
            )

    @property
    def dims(self) -> Dims:
        return Dims(self.w_x.shape[0], self.w_fu.shape[1],
                    self.w_y.shape[0], self.w_x.shape[1])


def simulate(model, u, x0=None):
    """Simulate the recursion; returns (y, x) with x holding N+1 rows.

    Raises :class:`SimulationDiverged` carrying the first bad sample index
    when a state becomes non-finite or exceeds ``STATE_BOUND``.
    """
    u = as_2d(u, "u")
    n = u.shape[0]
    n_x, n_u, n_y, _ = model.dims
    if u.shape[1] != n_u:
        raise ValueError(f"u has {u.shape[1]} channels, model expects {n_u}")
    if x0 is None:
        x0 = np.zeros(n_x)
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != n_x:
        raise ValueError(f"x0 must have length {n_x}")
    if not np.all(np.abs(x0) <= STATE_BOUND):
        raise SimulationDiverged(0)

    gr = isinstance(model, GrSsnnModel)
    act = model.activation
    w_x, w_fx, w_fu, b_f, b_x = model.w_x, model.w_fx, model.w_fu, model.b_f, model.b_x
    w_y, w_gx, w_gu, b_g, b_y = model.w_y, model.w_gx, model.w_gu, model.b_g, model.b_y
    if gr:
        A, B, C, D = model.lin.A, model.lin.B, model.lin.C, model.lin.D

    x = np.empty((n + 1, n_x))
    y = np.empty((n, n_y))
    x[0] = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            xk = x[k]
            uk = u[k]
            hf = act.f(w_fx @ xk + w_fu @ uk + b_f)
            hg = act.f(w_gx @ xk + w_gu @ uk + b_g)
            if gr:
                yk = C @ xk + D @ uk
                yk += w_y @ hg
                yk += b_y
                xn = A @ xk + B @ uk
                xn += w_x @ hf
                xn += b_x
            else:
                yk = w_y @ hg + b_y
                xn = w_x @ hf + b_x
            # a NaN compares False, so this also catches non-finite states
            if not np.all(np.abs(xn) <= STATE_BOUND):
                raise SimulationDiverged(k + 1)
            y[k] = yk
            x[k + 1] = xn
    return y, x


_NL_BLOCKS = ("w_x", "w_fx", "w_fu", "b_f", "b_x",
              "w_y", "w_gx", "w_gu", "b_g", "b_y")
_LIN_BLOCKS = ("A", "B", "C", "D")


@dataclass(frozen=True)
class Layout:
    """Deterministic map from parameter blocks to slices of a flat vector."""

    kind: str  # "ssnn" | "gr-ssnn"
    dims: Dims
    activation: str
    with_x0: bool
    version: int = LAYOUT_VERSION

    def block_shapes(self):
        n_x, n_u, n_y, n_n = self.dims
        shapes = {}
        if self.kind == "gr-ssnn":
            shapes.update({"A": (n_x, n_x), "B": (n_x, n_u),
                           "C": (n_y, n_x), "D": (n_y, n_u)})
        shapes.update({
            "w_x": (n_x, n_n), "w_fx": (n_n, n_x), "w_fu": (n_n, n_u),
            "b_f": (n_n,), "b_x": (n_x,),
            "w_y": (n_y, n_n), "w_gx": (n_n, n_x), "w_gu": (n_n, n_u),
            "b_g": (n_n,), "b_y": (n_y,),
        })
        if self.with_x0:
            shapes["x0"] = (n_x,)
        return shapes

    def slices(self):
        out = {}
        start = 0
        for name, shape in self.block_shapes().items():
            size = int(np.prod(shape))
            out[name] = slice(start, start + size)
            start += size
        return out

    @property
    def size(self):
        return sum(int(np.prod(s)) for s in self.block_shapes().values())


@dataclass
class ParamVector:
    theta: np.ndarray
    layout: Layout


def layout_for(model, with_x0=False) -> Layout:
    kind = "gr-ssnn" if isinstance(model, GrSsnnModel) else "ssnn"
    return Layout(kind, model.dims, model.activation.kind, with_x0)


def pack(model, x0=None) -> ParamVector:
    """Flatten all trainable parameters (row-major blocks, fixed order)."""
    layout = layout_for(model, with_x0=x0 is not None)
    parts = []
    if layout.kind == "gr-ssnn":
        parts += [model.lin.A.ravel(), model.lin.B.ravel(),
                  model.lin.C.ravel(), model.lin.D.ravel()]
    parts += [getattr(model, name).ravel() for name in _NL_BLOCKS]
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float).ravel()
        if x0.size != model.dims.n_x:
            raise ValueError(f"x0 must have length {model.dims.n_x}")
        parts.append(x0)
    return ParamVector(np.concatenate(parts), layout)


def unpack(theta, layout: Layout):
    """Rebuild (model, x0) from a flat vector; x0 is None without an x0 block."""
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != layout.size:
        raise ValueError(f"theta has length {theta.size}, layout needs {layout.size}")
    shapes = layout.block_shapes()
    sl = layout.slices()
    get = lambda name: theta[sl[name]].reshape(shapes[name]).copy()
    nl = {name: get(name) for name in _NL_BLOCKS}
    act = Activation(layout.activation)
    if layout.kind == "gr-ssnn":
        lin = LtiStateSpace(get("A"), get("B"), get("C"), get("D"))
        model = GrSsnnModel(lin=lin, activation=act, **nl)
    else:
        model = SsnnModel(activation=act, **nl)
    x0 = get("x0") if layout.with_x0 else None
    return model, x0


def jacobian_bptt(model, u, x0=None, with_x0=True) -> np.ndarray:
    """Exact Jacobian d yhat / d theta of the simulated output.

    Differentiates the unrolled recursion, carrying the chain through all
    past states: the state sensitivity S(k) = dx(k)/dtheta obeys

        S(k+1) = J_x(k) S(k) + (direct terms of step k),

    with J_x(k) the state-to-state Jacobian at step k.  Columns follow the
    layout of :func:`pack`; rows are sample-major, output-channel-minor.
    When ``with_x0`` is set the trailing columns hold d yhat / d x0.
    """
    u = as_2d(u, "u")
    n = u.shape[0]
    n_x, n_u, n_y, n_n = model.dims
    if x0 is None:
        x0 = np.zeros(n_x)
    _, x = simulate(model, u, x0)  # raises on divergence
    xk = x[:-1]

    layout = layout_for(model, with_x0=with_x0)
    sl = layout.slices()
    p = layout.size
    gr = layout.kind == "gr-ssnn"
    act = model.activation

    zf = xk @ model.w_fx.T + u @ model.w_fu.T + model.b_f
    hf, df = act.f_df(zf)
    zg = xk @ model.w_gx.T + u @ model.w_gu.T + model.b_g
    hg, dg = act.f_df(zg)

    mf = df[:, None, :] * model.w_x[None, :, :]   # (N, n_x, n_n)
    mg = dg[:, None, :] * model.w_y[None, :, :]   # (N, n_y, n_n)
    jx = mf @ model.w_fx                          # (N, n_x, n_x)
    jyx = mg @ model.w_gx                         # (N, n_y, n_x)
    if gr:
        jx = jx + model.lin.A
        jyx = jyx + model.lin.C

    # direct terms of the state recursion, one (n_x, p) block per sample
    d_state = np.zeros((n, n_x, p))
    wx0 = sl["w_x"].start
    for i in range(n_x):
        d_state[:, i, wx0 + i * n_n: wx0 + (i + 1) * n_n] = hf
    d_state[:, :, sl["w_fx"]] = (mf[:, :, :, None] * xk[:, None, None, :]).reshape(n, n_x, -1)
    d_state[:, :, sl["w_fu"]] = (mf[:, :, :, None] * u[:, None, None, :]).reshape(n, n_x, -1)
    d_state[:, :, sl["b_f"]] = mf
    bx0 = sl["b_x"].start
    for i in range(n_x):
        d_state[:, i, bx0 + i] = 1.0
    if gr:
        a0 = sl["A"].start
        b0 = sl["B"].start
        for i in range(n_x):
            d_state[:, i, a0 + i * n_x: a0 + (i + 1) * n_x] = xk
            d_state[:, i, b0 + i * n_u: b0 + (i + 1) * n_u] = u

    s_all = np.empty((n, n_x, p))
    s = np.zeros((n_x, p))
    if with_x0:
        s[:, sl["x0"]] = np.eye(n_x)
    for k in range(n):
        s_all[k] = s
        s = jx[k] @ s + d_state[k]

    jac = np.matmul(jyx, s_all)  # (N, n_y, p): chain through the states
    wy0 = sl["w_y"].start
    for r in range(n_y):
        jac[:, r, wy0 + r * n_n: wy0 + (r + 1) * n_n] += hg
    jac[:, :, sl["w_gx"]] += (mg[:, :, :, None] * xk[:, None, None, :]).reshape(n, n_y, -1)
    jac[:, :, sl["w_gu"]] += (mg[:, :, :, None] * u[:, None, None, :]).reshape(n, n_y, -1)
    jac[:, :, sl["b_g"]] += mg
    by0 = sl["b_y"].start
    for r in range(n_y):
        jac[:, r, by0 + r] += 1.0
    if gr:
        c0 = sl["C"].start
        d0 = sl["D"].start
        for r in range(n_y):
            jac[:, r, c0 + r * n_x: c0 + (r + 1) * n_x] += xk
            jac[:, r, d0 + r * n_u: d0 + (r + 1) * n_u] += u
    return jac.reshape(n * n_y, p)


def model_to_dict(model, **meta) -> dict:
    layout = layout_for(model)
    d = {
        "kind": layout.kind,
        "dims": list(model.dims),
        "activation": model.activation.kind,
        "layout_version": LAYOUT_VERSION,
    }
    if layout.kind == "gr-ssnn":
        for name in _LIN_BLOCKS:
            d[name] = getattr(model.lin, name).tolist()
    for name in _NL_BLOCKS:
        d[name] = getattr(model, name).tolist()
    if meta:
        d["meta"] = meta
    return d


def model_from_dict(d: dict):
    act = Activation(d["activation"])
    nl = {name: np.array(d[name]) for name in _NL_BLOCKS}
    if d["kind"] == "gr-ssnn":
        lin = LtiStateSpace(np.array(d["A"]), np.array(d["B"]),
                            np.array(d["C"]), np.array(d["D"]))
        return GrSsnnModel(lin=lin, activation=act, **nl)
    return SsnnModel(activation=act, **nl)


def save_model(model, path, **meta):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, **meta), fh)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
