"""Fisher information and constrained Cramer-Rao bounds for the offset model.

For the projected model ``Gamma y ~ N(Gamma H theta, Gamma Sigma Gamma^T (x) I_K)``
the Fisher information is ``K Gamma^T (Gamma Sigma Gamma^T)^{-1} Gamma`` and the
bound under a constraint with nullspace basis ``U`` is ``U (U^T F U)^{-1} U^T``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .model import (
    Homoscedastic,
    NetworkShape,
    NoiseModel,
    ProjectionMatrix,
    ReferenceConstraint,
    SingularSystemError,
    _frozen,
    average_reference_constraint,
    single_source_projector,
)

# Eigenvalues below this fraction of the largest are treated as zero.
NULLSPACE_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class FisherInformation:
    matrix: np.ndarray
    n_measurements: int = 1

    def __post_init__(self):
        f = _frozen(self.matrix)
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise ValueError(f"FIM must be square, got shape {f.shape}")
        scale = max(1.0, np.abs(f).max())
        if np.abs(f - f.T).max() > 1e-12 * scale:
            raise ValueError("FIM is not symmetric")
        object.__setattr__(self, "matrix", _frozen(0.5 * (f + f.T)))

    @property
    def n_sensors(self) -> int:
        return self.matrix.shape[0]

    @property
    def scale_note(self) -> str:
        return f"includes factor K={self.n_measurements}"


@dataclass(frozen=True, eq=False)
class BoundReport:
    ccrb_matrix: np.ndarray
    trace: float
    constraint_label: str
    closed_form_trace: float | None = None

    def to_dict(self) -> dict:
        return {
            "constraint": self.constraint_label,
            "trace": self.trace,
            "closed_form_trace": self.closed_form_trace,
            "ccrb_matrix": self.ccrb_matrix.tolist(),
        }


@dataclass(frozen=True, eq=False)
class ProofIntermediates:
    psi: np.ndarray
    psi_inv: np.ndarray
    omega: np.ndarray | None = None


def fim_general(gamma: ProjectionMatrix, noise: NoiseModel, n_measurements: int) -> FisherInformation:
    """``K Gamma^T (Gamma Sigma Gamma^T)^{-1} Gamma`` via a Cholesky solve."""
    if n_measurements < 1:
        raise ValueError("n_measurements must be >= 1")
    g = gamma.gamma
    sigma = noise.covariance(gamma.n_sensors)
    m = g @ sigma @ g.T
    try:
        cf = linalg.cho_factor(m, lower=True)
    except linalg.LinAlgError:
        raise SingularSystemError("Gamma Sigma Gamma^T is singular: invalid projector/noise pair") from None
    f = n_measurements * g.T @ linalg.cho_solve(cf, g)
    return FisherInformation(0.5 * (f + f.T), n_measurements)


def psi_matrix(n_sensors: int) -> np.ndarray:
    """``I + 1 1^T`` of size ``N - 1``; the Gram matrix of the average-reference basis."""
    m = n_sensors - 1
    return np.eye(m) + np.ones((m, m))


def psi_inverse(n_sensors: int) -> np.ndarray:
    """Sherman-Morrison inverse of :func:`psi_matrix`: ``I - 1 1^T / N``."""
    m = n_sensors - 1
    # mu = 1 + 1^T 1 = N
    return np.eye(m) - np.ones((m, m)) / n_sensors


def fim_homoscedastic_closed_form(n_sensors: int, n_measurements: int, sigma2: float) -> FisherInformation:
    if not sigma2 > 0:
        raise ValueError("sigma2 must be strictly positive")
    u2 = average_reference_constraint(NetworkShape(n_sensors)).nullspace_basis
    f = (n_measurements / sigma2) * u2 @ psi_inverse(n_sensors) @ u2.T
    return FisherInformation(f, n_measurements)


def ccrb(fim: FisherInformation, constraint: ReferenceConstraint) -> BoundReport:
    """Constrained bound ``U (U^T F U)^{-1} U^T``."""
    u = constraint.nullspace_basis
    if u.shape[0] != fim.n_sensors:
        raise ValueError(f"constraint is for {u.shape[0]} sensors, FIM for {fim.n_sensors}")
    reduced = u.T @ fim.matrix @ u
    reduced = 0.5 * (reduced + reduced.T)
    eig = np.linalg.eigvalsh(reduced)
    if eig.size and not (eig[-1] > 0 and eig[0] > NULLSPACE_RTOL * eig[-1]):
        raise SingularSystemError("constraint does not identify the model (U^T F U is singular)")
    cf = linalg.cho_factor(reduced, lower=True)
    bound = u @ linalg.cho_solve(cf, u.T)
    bound = 0.5 * (bound + bound.T)
    return BoundReport(_frozen(bound), float(np.trace(bound)), constraint.label)


def _spectrum(fim: FisherInformation):
    w, v = np.linalg.eigh(fim.matrix)
    top = w[-1]
    if not top > 0:
        raise ValueError("FIM has no positive eigenvalue: nothing is identifiable")
    return w, v, w < NULLSPACE_RTOL * top


def pseudo_inverse(fim: FisherInformation) -> np.ndarray:
    """Moore-Penrose inverse with the same eigenvalue cut as the nullspace detection."""
    w, v, null = _spectrum(fim)
    keep = ~null
    return (v[:, keep] / w[keep]) @ v[:, keep].T


def optimal_constraint_from_fim(fim: FisherInformation) -> ReferenceConstraint:
    """Constraint whose gradient rows span the nullspace of the FIM."""
    w, v, null = _spectrum(fim)
    if not null.any():
        raise ValueError("FIM is full rank: no constraint needed")
    grad = v[:, null].T.copy()
    # sign convention: each gradient row has a nonnegative sum
    signs = np.where(grad.sum(axis=1) < 0, -1.0, 1.0)
    grad *= signs[:, None]
    return ReferenceConstraint(
        gradient=grad,
        response=np.zeros(grad.shape[0]),
        nullspace_basis=v[:, ~null],
        label="optimal",
    )


def trace_single_ref_homoscedastic(n_sensors: int, n_measurements: int, sigma2: float) -> float:
    if n_sensors < 2:
        raise ValueError("need at least 2 sensors")
    return 2.0 * sigma2 * (n_sensors - 1) / n_measurements


def trace_average_ref_homoscedastic(n_sensors: int, n_measurements: int, sigma2: float) -> float:
    if n_sensors < 2:
        raise ValueError("need at least 2 sensors")
    return sigma2 * (n_sensors - 1) / n_measurements


def omega_matrix(variances, ref_index: int) -> np.ndarray:
    """``U^T Sigma U`` for diagonal ``Sigma`` with ``U`` pivoting on the reference sensor.

    Equals ``diag(non-reference variances) + var[ref] * 1 1^T``.
    """
    v = np.asarray(variances, dtype=float)
    others = np.delete(v, ref_index)
    return np.diag(others) + v[ref_index] * np.ones((others.size, others.size))


def proof_intermediates(variances, ref_index: int = 0) -> ProofIntermediates:
    v = np.asarray(variances, dtype=float)
    return ProofIntermediates(
        psi=psi_matrix(v.size),
        psi_inv=psi_inverse(v.size),
        omega=omega_matrix(v, ref_index),
    )


class DiagonalNoiseTraces(NamedTuple):
    trace_single: float
    trace_average: float
    gap: float
    closed_form_gap: float


def traces_diagonal_noise(n_measurements: int, variances, ref_index: int | None = None) -> DiagonalNoiseTraces:
    """Bound traces for independent, non-identical sensor noise.

    ``ref_index`` defaults to the minimum-variance sensor. ``gap`` is the
    difference of the two traces as computed from the matrices;
    ``closed_form_gap`` is the published expression
    ``(N/K) s_ref S / (s_ref + S)`` with ``S`` the sum of the other variances.
    The two agree only when all variances are equal.
    """
    v = np.asarray(variances, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise ValueError("need a vector of at least 2 variances")
    if not np.all(v > 0):
        raise ValueError("variances must be strictly positive")
    if n_measurements < 1:
        raise ValueError("n_measurements must be >= 1")
    if ref_index is None:
        ref_index = int(np.argmin(v))
    if not 0 <= ref_index < v.size:
        raise IndexError(f"reference sensor {ref_index} out of range for {v.size} sensors")

    n = v.size
    omega = omega_matrix(v, ref_index)
    trace_single = np.trace(omega) / n_measurements
    trace_average = np.trace(omega @ psi_inverse(n)) / n_measurements
    s_ref = v[ref_index]
    rest = v.sum() - s_ref
    closed = (n / n_measurements) * s_ref * rest / (s_ref + rest)
    return DiagonalNoiseTraces(
        float(trace_single),
        float(trace_average),
        float(trace_single - trace_average),
        float(closed),
    )


def single_source_bounds(
    shape: NetworkShape, noise: NoiseModel, constraints: list[ReferenceConstraint]
) -> list[BoundReport]:
    """Bound reports for several constraints on one single-source network.

    Closed-form traces are attached for homoscedastic noise and for the
    diagonal case.
    """
    n, k = shape.n_sensors, shape.n_measurements
    fim = fim_general(single_source_projector(shape), noise, k)
    reports = []
    for c in constraints:
        rep = ccrb(fim, c)
        closed = _closed_form_for(c, n, k, noise)
        reports.append(BoundReport(rep.ccrb_matrix, rep.trace, rep.constraint_label, closed))
    return reports


def _closed_form_for(constraint: ReferenceConstraint, n, k, noise) -> float | None:
    label = constraint.label
    if isinstance(noise, Homoscedastic):
        if label == "average":
            return trace_average_ref_homoscedastic(n, k, noise.sigma2)
        if label.startswith("single:"):
            return trace_single_ref_homoscedastic(n, k, noise.sigma2)
        return None
    if not noise.is_diagonal:
        return None
    if label == "average":
        return traces_diagonal_noise(k, noise.variances(n)).trace_average
    if label.startswith("single:"):
        idx = int(label.split(":", 1)[1])
        return traces_diagonal_noise(k, noise.variances(n), idx).trace_single
    return None

