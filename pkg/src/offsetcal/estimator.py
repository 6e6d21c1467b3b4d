"""Constrained weighted least-squares offset estimation.

Solves

    minimize  || (W (x) I_K) (P (x) I_K) (y - (I_N (x) 1_K) theta) ||^2
    subject to C theta = d

where ``P = I - 1 1^T / N`` removes the common signal. Nothing of size NK
is formed: with ``Y`` the ``N x K`` measurement array the objective reduces
to ``K theta^T Q theta - 2 theta^T (Q Y 1_K) + const`` with
``Q = P W^T W P``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .model import (
    NoiseModel,
    ReferenceConstraint,
    SingularSystemError,
    as_measurements,
    check_spd,
)

WEIGHTINGS = ("optimal", "identity")


@dataclass(frozen=True, eq=False)
class EstimatorConfig:
    """Weighting and constraint for :func:`estimate_offsets`.

    ``weighting`` is ``"optimal"`` (``W = Sigma^{-1/2}``), ``"identity"``, or
    an explicit symmetric positive definite ``N x N`` array.
    """

    constraint: ReferenceConstraint
    weighting: str | np.ndarray = "optimal"

    def __post_init__(self):
        w = self.weighting
        if isinstance(w, str):
            if w not in WEIGHTINGS:
                raise ValueError(f"weighting must be one of {WEIGHTINGS} or a matrix, got {w!r}")
            return
        w = np.array(w, dtype=float)
        check_spd(w, "weighting matrix")
        if w.shape[0] != self.constraint.n_sensors:
            raise ValueError("weighting matrix size does not match the constraint")
        w.flags.writeable = False
        object.__setattr__(self, "weighting", w)

    def weight_matrix(self, noise: NoiseModel, n_sensors: int) -> np.ndarray:
        if isinstance(self.weighting, np.ndarray):
            return self.weighting
        if self.weighting == "identity":
            return np.eye(n_sensors)
        return noise.whitening(n_sensors)


@dataclass(frozen=True, eq=False)
class EstimateResult:
    theta_hat: np.ndarray
    lagrange_multiplier: np.ndarray
    residual_norm: float
    constraint_violation: float

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.tolist(),
            "lagrange_multiplier": self.lagrange_multiplier.tolist(),
            "residual_norm": self.residual_norm,
            "constraint_violation": self.constraint_violation,
        }


def centering_projector(n_sensors: int) -> np.ndarray:
    if n_sensors < 2:
        raise ValueError("need at least 2 sensors")
    return np.eye(n_sensors) - np.full((n_sensors, n_sensors), 1.0 / n_sensors)


def _center(a: np.ndarray) -> np.ndarray:
    # P @ a without forming P
    return a - a.mean(axis=0, keepdims=True)


class ConstrainedWLS:
    """Factored KKT system for one network size, noise model and constraint.

    The KKT matrix does not depend on the measurements, so it is checked and
    factored once and :meth:`solve` can be called for many data sets.
    Stationarity is ``Hess theta + C^T lam = g`` with ``Hess = K Q`` and
    ``g = Q Y 1_K``; returned multipliers follow that sign convention.
    """

    def __init__(self, noise: NoiseModel, config: EstimatorConfig, n_sensors: int, n_measurements: int):
        c = config.constraint
        if c.n_sensors != n_sensors:
            raise ValueError(f"constraint is for {c.n_sensors} sensors, measurements have {n_sensors}")
        if n_measurements < 1:
            raise ValueError("n_measurements must be >= 1")
        n, m = n_sensors, c.n_rows
        w = config.weight_matrix(noise, n)
        self.constraint = c
        self.n_sensors = n
        self.n_measurements = n_measurements
        self._wp = _center(w.T).T  # W P
        self._q = self._wp.T @ self._wp
        hess = n_measurements * self._q

        # Row scaling of C leaves theta unchanged and keeps the KKT matrix balanced.
        self._scale = max(np.abs(hess).max(), np.finfo(float).tiny) / np.abs(c.gradient).max()
        kkt = np.zeros((n + m, n + m))
        kkt[:n, :n] = hess
        kkt[:n, n:] = self._scale * c.gradient.T
        kkt[n:, :n] = self._scale * c.gradient

        sv = np.linalg.svd(kkt, compute_uv=False)
        if sv[-1] <= sv[0] * (n + m) * np.finfo(float).eps * 1e3:
            raise SingularSystemError("unidentifiable: constraint does not complete the model")
        self._lu = linalg.lu_factor(kkt)

    def solve(self, y) -> EstimateResult:
        y = as_measurements(y)
        if y.shape != (self.n_sensors, self.n_measurements):
            raise ValueError(
                f"measurements have shape {y.shape}, expected ({self.n_sensors}, {self.n_measurements})"
            )
        c = self.constraint
        n = self.n_sensors
        rhs = np.concatenate([self._q @ y.sum(axis=1), self._scale * c.response])
        sol = linalg.lu_solve(self._lu, rhs)
        theta = sol[:n]
        lam = self._scale * sol[n:]
        resid = self._wp @ (y - theta[:, None])
        violation = float(np.abs(c.gradient @ theta - c.response).max())
        return EstimateResult(theta, lam, float(np.linalg.norm(resid)), violation)


def estimate_offsets(y, noise: NoiseModel, config: EstimatorConfig) -> EstimateResult:
    """Constrained weighted least-squares offsets for one ``N x K`` measurement set."""
    y = as_measurements(y)
    return ConstrainedWLS(noise, config, *y.shape).solve(y)


def feasible_projection(theta_true, constraint: ReferenceConstraint) -> np.ndarray:
    """The offsets the constrained estimator targets, ``theta - (C theta / C 1) 1``.

    For a single reference this subtracts the reference sensor's offset from
    every sensor; for the average reference it subtracts the mean. The
    removed common component is the bias the reference choice implies.
    """
    theta = np.asarray(theta_true, dtype=float)
    c = constraint.gradient
    if c.shape[0] != 1:
        raise ValueError("feasible projection is defined for single-row constraints")
    c = c[0]
    if theta.shape != c.shape:
        raise ValueError(f"offset vector has length {theta.size}, constraint expects {c.size}")
    denom = c.sum()
    if abs(denom) <= 1e-12 * np.abs(c).sum():
        raise ValueError("constraint gradient is orthogonal to the common offset direction")
    shift = (c @ theta - constraint.response[0]) / denom
    return theta - shift
