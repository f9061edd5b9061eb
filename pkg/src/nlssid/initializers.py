"""Initialization schemes for state-space neural networks.

Five schemes are provided, two fully random and three seeded from a
previously estimated linear state-space approximation:

* ``random-ssnn``   — uniform random weights, zero biases (SsnnModel).
* ``random-gr``     — same for the state branch; the output branch and the
  state matrix start at zero, B/C/D uniform random (GrSsnnModel).
* ``lti-suykens``   — linear model embedded through the linear regime of
  tanh; the leftover linear-layer columns are random, the leftover
  nonlinear-layer rows are zero.
* ``lti-improved``  — as above but the leftover linear-layer columns are
  zero while the leftover nonlinear-layer rows and biases are random,
  creating a pool of nonlinear features the optimizer can recruit.
* ``lti-gr``        — the linear model becomes the parallel linear term of
  a GrSsnnModel; the nonlinear branch has random inner weights and biases
  but zero outer weights, so the initial model reproduces the linear one
  exactly.

All uniform draws come from per-block substreams derived from
``(seed, crc32(block name))`` so every block is reproducible in isolation.
"""
from __future__ import annotations

import warnings
import zlib
from dataclasses import dataclass

import numpy as np

from .lti import LtiStateSpace, simulate_lti
from .ssnn import Activation, Dims, GrSsnnModel, SsnnModel

__all__ = [
    "SCHEMES",
    "InitScheme",
    "structure_of",
    "init_random",
    "init_from_lti",
    "select_gamma",
    "build_initial_model",
]

SCHEMES = ("random-ssnn", "random-gr", "lti-suykens", "lti-improved", "lti-gr")

_GR_SCHEMES = ("random-gr", "lti-gr")
_LINEAR_REGIME_SCHEMES = ("lti-suykens", "lti-improved")

# magnitude below which tanh is treated as linear (relative error <= z^2/3)
DEFAULT_Z_MAX = 0.05


@dataclass(frozen=True)
class InitScheme:
    kind: str
    seed: int = 0
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ValueError(f"unknown init scheme {self.kind!r}")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")


def structure_of(kind: str) -> str:
    return "gr-ssnn" if kind in _GR_SCHEMES else "ssnn"


def _rng(seed, block):
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(block.encode())])
    )


def _u11(seed, block, shape, scale=1.0):
    return _rng(seed, block).uniform(-1.0, 1.0, size=shape) * scale


def init_random(kind, dims: Dims, activation: Activation, seed: int):
    """Random initialization: U(-1,1) weights, inner weights shrunk by
    sqrt(n_x) or sqrt(n_u), all biases zero.

    For the generalized residual structure the outer output weights and the
    state matrix start at zero (only B, C, D are random) so the initial
    model cannot blow up through state feedback.
    """
    dims = Dims(*dims)
    n_x, n_u, n_y, n_n = dims
    sx = 1.0 / np.sqrt(n_x)
    su = 1.0 / np.sqrt(n_u)
    common = dict(
        w_fx=_u11(seed, "w_fx", (n_n, n_x), sx),
        w_fu=_u11(seed, "w_fu", (n_n, n_u), su),
        b_f=np.zeros(n_n),
        b_x=np.zeros(n_x),
        w_gx=_u11(seed, "w_gx", (n_n, n_x), sx),
        w_gu=_u11(seed, "w_gu", (n_n, n_u), su),
        b_g=np.zeros(n_n),
        b_y=np.zeros(n_y),
        activation=activation,
    )
    if kind == "random-ssnn":
        return SsnnModel(
            w_x=_u11(seed, "w_x", (n_x, n_n)),
            w_y=_u11(seed, "w_y", (n_y, n_n)),
            **common,
        )
    if kind == "random-gr":
        lin = LtiStateSpace(
            np.zeros((n_x, n_x)),
            _u11(seed, "B", (n_x, n_u)),
            _u11(seed, "C", (n_y, n_x)),
            _u11(seed, "D", (n_y, n_u)),
        )
        return GrSsnnModel(
            lin=lin,
            w_x=_u11(seed, "w_x", (n_x, n_n)),
            w_y=np.zeros((n_y, n_n)),
            **common,
        )
    raise ValueError(f"{kind!r} is not a random initialization scheme")


def select_gamma(lti: LtiStateSpace, u, z_max: float = DEFAULT_Z_MAX) -> float:
    """Pick the scale placing every pre-activation in the linear regime.

    The linear model is simulated once on the training input; the returned
    gamma satisfies gamma * |pre-activation| <= z_max for both branches
    (the state-branch pre-activations are A x(k) + B u(k), the output-branch
    ones C x(k) + D u(k)).
    """
    if not z_max > 0:
        raise ValueError("z_max must be positive")
    y, x = simulate_lti(lti, u)
    peak = max(float(np.max(np.abs(x[1:]))), float(np.max(np.abs(y))))
    if not np.isfinite(peak):
        raise ValueError("linear model diverges on this input")
    if peak == 0.0:
        warnings.warn("all pre-activations are zero; falling back to gamma = 1",
                      stacklevel=2)
        return 1.0
    return z_max / peak


def init_from_lti(kind, lti: LtiStateSpace, n_n: int,
                  activation: Activation, gamma: float | None, seed: int):
    """Seed a network from a linear approximation (expects unit-std states).

    ``lti-suykens`` and ``lti-improved`` embed the linear dynamics in the
    first rows/columns of the tanh layers, scaled by ``gamma`` so the
    activations operate in their linear regime; ``lti-gr`` copies the
    linear model into the parallel linear term and needs no gamma.
    """
    n_x, n_u, n_y = lti.n_x, lti.n_u, lti.n_y
    if n_n < n_x:
        raise ValueError(f"need n_n >= n_x neurons, got n_n={n_n} < n_x={n_x}")
    sx = 1.0 / np.sqrt(n_x)
    su = 1.0 / np.sqrt(n_u)

    if kind in _LINEAR_REGIME_SCHEMES:
        if n_n < n_y:
            raise ValueError(f"need n_n >= n_y for the output identity block, "
                             f"got n_n={n_n} < n_y={n_y}")
        if activation.kind != "tanh":
            raise ValueError(f"{kind} relies on the linear regime of tanh; "
                             f"got activation {activation.kind!r}")
        if gamma is None or not gamma > 0:
            raise ValueError(f"{kind} requires a positive gamma")
        eye_x = np.eye(n_x, dtype=float)
        eye_y = np.eye(n_y, dtype=float)
        if kind == "lti-suykens":
            w_x = np.hstack([eye_x, _u11(seed, "w_x", (n_x, n_n - n_x))]) / gamma
            w_fx = np.vstack([gamma * lti.A, np.zeros((n_n - n_x, n_x))])
            w_fu = np.vstack([gamma * lti.B, np.zeros((n_n - n_x, n_u))])
            b_f = np.zeros(n_n)
            w_y = np.hstack([eye_y, _u11(seed, "w_y", (n_y, n_n - n_y))]) / gamma
            w_gx = np.vstack([gamma * lti.C, np.zeros((n_n - n_y, n_x))])
            w_gu = np.vstack([gamma * lti.D, np.zeros((n_n - n_y, n_u))])
            b_g = np.zeros(n_n)
        else:  # lti-improved
            w_x = np.hstack([eye_x, np.zeros((n_x, n_n - n_x))]) / gamma
            w_fx = np.vstack([gamma * lti.A, _u11(seed, "w_fx", (n_n - n_x, n_x), sx)])
            w_fu = np.vstack([gamma * lti.B, _u11(seed, "w_fu", (n_n - n_x, n_u), su)])
            b_f = np.concatenate([np.zeros(n_x), _u11(seed, "b_f", (n_n - n_x,))])
            w_y = np.hstack([eye_y, np.zeros((n_y, n_n - n_y))]) / gamma
            w_gx = np.vstack([gamma * lti.C, _u11(seed, "w_gx", (n_n - n_y, n_x), sx)])
            w_gu = np.vstack([gamma * lti.D, _u11(seed, "w_gu", (n_n - n_y, n_u), su)])
            b_g = np.concatenate([np.zeros(n_y), _u11(seed, "b_g", (n_n - n_y,))])
        return SsnnModel(
            w_x=w_x, w_fx=w_fx, w_fu=w_fu, b_f=b_f, b_x=np.zeros(n_x),
            w_y=w_y, w_gx=w_gx, w_gu=w_gu, b_g=b_g, b_y=np.zeros(n_y),
            activation=activation,
        )

    if kind == "lti-gr":
        lin = LtiStateSpace(lti.A.copy(), lti.B.copy(), lti.C.copy(), lti.D.copy())
        return GrSsnnModel(
            lin=lin,
            w_x=np.zeros((n_x, n_n)),
            w_fx=_u11(seed, "w_fx", (n_n, n_x), sx),
            w_fu=_u11(seed, "w_fu", (n_n, n_u), su),
            b_f=_u11(seed, "b_f", (n_n,)),
            b_x=np.zeros(n_x),
            w_y=np.zeros((n_y, n_n)),
            w_gx=_u11(seed, "w_gx", (n_n, n_x), sx),
            w_gu=_u11(seed, "w_gu", (n_n, n_u), su),
            b_g=_u11(seed, "b_g", (n_n,)),
            b_y=np.zeros(n_y),
            activation=activation,
        )

    raise ValueError(f"{kind!r} is not a linear-approximation scheme")


def build_initial_model(scheme: InitScheme, dims: Dims, activation: Activation,
                        lti: LtiStateSpace | None = None,
                        gamma: float | None = None):
    """Dispatch to the right initializer for a configured scheme."""
    if scheme.kind in ("random-ssnn", "random-gr"):
        return init_random(scheme.kind, dims, activation, scheme.seed)
    if lti is None:
        raise ValueError(f"{scheme.kind} needs a linear approximation")
    if (lti.n_x, lti.n_u, lti.n_y) != (dims.n_x, dims.n_u, dims.n_y):
        raise ValueError("linear model dimensions do not match the requested dims")
    g = scheme.gamma if scheme.gamma is not None else gamma
    return init_from_lti(scheme.kind, lti, dims.n_n, activation, g, scheme.seed)
