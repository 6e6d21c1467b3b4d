"""Measurement model, noise covariances and reference constraints.

Measurements are held as an ``N x K`` array (row ``n`` is sensor ``n``).
Whenever a vectorized form is needed the layout is sensor-major: entry
``(n, k)`` sits at index ``n * K + k``, i.e. ``y.reshape(-1)`` in C order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# Relative eigenvalue floor used by the SPD check on covariances.
SPD_RTOL = 1e-12
# Absolute tolerance on C @ U for a constraint to be accepted.
ORTHOGONALITY_ATOL = 1e-12


class SingularSystemError(np.linalg.LinAlgError):
    """A linear system that should identify the offsets is singular."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


def _full_rank(a: np.ndarray, rank: int) -> bool:
    return int(np.linalg.matrix_rank(a)) == rank


def check_spd(matrix: np.ndarray, name: str = "covariance") -> None:
    """Raise ``ValueError`` unless ``matrix`` is symmetric positive definite.

    The smallest eigenvalue must exceed ``SPD_RTOL`` times the largest.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(m).max())):
        raise ValueError(f"{name} is not symmetric")
    eig = np.linalg.eigvalsh(m)
    if not (eig[-1] > 0 and eig[0] > SPD_RTOL * eig[-1]):
        raise ValueError(f"{name} is not positive definite (eigenvalues {eig[0]:.3g}..{eig[-1]:.3g})")


@dataclass(frozen=True)
class NetworkShape:
    n_sensors: int
    n_measurements: int = 1
    subspace_rank: int = 1

    def __post_init__(self):
        if self.n_sensors < 2:
            raise ValueError(f"need at least 2 sensors, got {self.n_sensors}")
        if self.n_measurements < 1:
            raise ValueError(f"need at least 1 measurement, got {self.n_measurements}")
        if not 1 <= self.subspace_rank < self.n_sensors:
            raise ValueError(
                f"subspace rank must satisfy 1 <= r < N, got r={self.subspace_rank}, N={self.n_sensors}"
            )

    @property
    def n_constraints(self) -> int:
        """Constraint rows needed to make the offsets identifiable."""
        return self.subspace_rank


# ---------------------------------------------------------------------------
# Noise models. The sensor covariance is N x N; across the K measurement
# epochs the full covariance is cov (x) I_K, which is never formed densely.
# ---------------------------------------------------------------------------


class NoiseModel:
    """Stationary Gaussian noise across sensors.

    Subclasses describe the ``N x N`` sensor covariance. Use
    :meth:`covariance` to materialize it for a given network size.
    """

    is_diagonal = False

    def covariance(self, n_sensors: int) -> np.ndarray:
        raise NotImplementedError

    def variances(self, n_sensors: int) -> np.ndarray:
        return np.diag(self.covariance(n_sensors)).copy()

    def whitening(self, n_sensors: int) -> np.ndarray:
        """Symmetric inverse square root of the sensor covariance."""
        raise NotImplementedError

    def noise_factor(self, n_sensors: int) -> np.ndarray:
        """A matrix ``L`` with ``L @ L.T`` equal to the sensor covariance."""
        return np.linalg.cholesky(self.covariance(n_sensors))

    def to_dict(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_dict(d: dict) -> "NoiseModel":
        kind = d.get("kind")
        if kind == "homoscedastic":
            return Homoscedastic(float(d["sigma2"]))
        if kind == "diagonal":
            return IndependentDiagonal(d["variances"])
        if kind == "general":
            return GeneralStationary(d["covariance"])
        raise ValueError(f"unknown noise kind {kind!r}")


@dataclass(frozen=True)
class Homoscedastic(NoiseModel):
    sigma2: float

    is_diagonal = True

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"variance must be strictly positive, got {self.sigma2}")

    def covariance(self, n_sensors):
        return self.sigma2 * np.eye(n_sensors)

    def variances(self, n_sensors):
        return np.full(n_sensors, self.sigma2)

    def whitening(self, n_sensors):
        return np.eye(n_sensors) / np.sqrt(self.sigma2)

    def noise_factor(self, n_sensors):
        return np.sqrt(self.sigma2) * np.eye(n_sensors)

    def to_dict(self):
        return {"kind": "homoscedastic", "sigma2": self.sigma2}


@dataclass(frozen=True, eq=False)
class IndependentDiagonal(NoiseModel):
    sigma2: np.ndarray

    is_diagonal = True

    def __post_init__(self):
        v = _frozen(self.sigma2)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("per-sensor variances must be a vector of length >= 2")
        if not np.all(v > 0):
            raise ValueError("per-sensor variances must be strictly positive")
        object.__setattr__(self, "sigma2", v)

    @property
    def n_sensors(self) -> int:
        return self.sigma2.size

    def _check(self, n_sensors):
        if n_sensors != self.n_sensors:
            raise ValueError(f"noise model has {self.n_sensors} sensors, expected {n_sensors}")

    def covariance(self, n_sensors):
        self._check(n_sensors)
        return np.diag(self.sigma2)

    def variances(self, n_sensors):
        self._check(n_sensors)
        return self.sigma2.copy()

    def whitening(self, n_sensors):
        self._check(n_sensors)
        return np.diag(1.0 / np.sqrt(self.sigma2))

    def noise_factor(self, n_sensors):
        self._check(n_sensors)
        return np.diag(np.sqrt(self.sigma2))

    def to_dict(self):
        return {"kind": "diagonal", "variances": self.sigma2.tolist()}


@dataclass(frozen=True, eq=False)
class GeneralStationary(NoiseModel):
    sigma: np.ndarray

    def __post_init__(self):
        s = _frozen(self.sigma)
        check_spd(s)
        object.__setattr__(self, "sigma", _frozen(0.5 * (s + s.T)))

    @property
    def n_sensors(self) -> int:
        return self.sigma.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return bool(np.count_nonzero(self.sigma - np.diag(np.diag(self.sigma))) == 0)

    def _check(self, n_sensors):
        if n_sensors != self.n_sensors:
            raise ValueError(f"noise model has {self.n_sensors} sensors, expected {n_sensors}")

    def covariance(self, n_sensors):
        self._check(n_sensors)
        return self.sigma.copy()

    @cached_property
    def _whitening(self):
        w, v = np.linalg.eigh(self.sigma)
        return _frozen((v / np.sqrt(w)) @ v.T)

    @cached_property
    def _cholesky(self):
        return _frozen(np.linalg.cholesky(self.sigma))

    def whitening(self, n_sensors):
        self._check(n_sensors)
        return self._whitening

    def noise_factor(self, n_sensors):
        self._check(n_sensors)
        return self._cholesky

    def to_dict(self):
        return {"kind": "general", "covariance": self.sigma.tolist()}


# ---------------------------------------------------------------------------
# Projector and constraints
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """Full-row-rank ``(N - r) x N`` matrix annihilating the signal subspace."""

    gamma: np.ndarray

    def __post_init__(self):
        g = _frozen(self.gamma)
        if g.ndim != 2 or g.shape[0] >= g.shape[1]:
            raise ValueError(f"projector must be (N-r) x N with r >= 1, got shape {g.shape}")
        if not _full_rank(g, g.shape[0]):
            raise ValueError("projector rows are not linearly independent")
        object.__setattr__(self, "gamma", g)

    @property
    def n_sensors(self) -> int:
        return self.gamma.shape[1]


def single_source_projector(shape: NetworkShape) -> ProjectionMatrix:
    """``[-1 | I]`` of shape ``(N-1) x N``; each row differences a sensor against sensor 0."""
    if shape.subspace_rank != 1:
        raise ValueError("the single-source projector requires subspace_rank == 1")
    n = shape.n_sensors
    gamma = np.hstack([-np.ones((n - 1, 1)), np.eye(n - 1)])
    return ProjectionMatrix(gamma)


@dataclass(frozen=True, eq=False)
class ReferenceConstraint:
    """Linear constraint ``C @ theta = d`` with a basis ``U`` of the nullspace of ``C``."""

    gradient: np.ndarray
    response: np.ndarray
    nullspace_basis: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        c = _frozen(np.atleast_2d(self.gradient))
        d = _frozen(np.atleast_1d(self.response))
        u = _frozen(self.nullspace_basis)
        k, n = c.shape
        if d.shape != (k,):
            raise ValueError(f"response must have length {k}, got shape {d.shape}")
        if u.ndim != 2 or u.shape != (n, n - k):
            raise ValueError(f"nullspace basis must be {n} x {n - k}, got shape {u.shape}")
        if not _full_rank(c, k):
            raise ValueError("constraint gradient does not have full row rank")
        if not _full_rank(u, n - k):
            raise ValueError("nullspace basis columns are not linearly independent")
        if np.abs(c @ u).max() > ORTHOGONALITY_ATOL:
            raise ValueError("nullspace basis is not orthogonal to the constraint gradient")
        object.__setattr__(self, "gradient", c)
        object.__setattr__(self, "response", d)
        object.__setattr__(self, "nullspace_basis", u)

    @property
    def n_sensors(self) -> int:
        return self.gradient.shape[1]

    @property
    def n_rows(self) -> int:
        return self.gradient.shape[0]

    def with_basis(self, basis: np.ndarray) -> "ReferenceConstraint":
        return ReferenceConstraint(self.gradient, self.response, basis, self.label)


def single_reference_constraint(shape: NetworkShape, ref_index: int) -> ReferenceConstraint:
    """Pin sensor ``ref_index`` to zero offset."""
    n = shape.n_sensors
    if not 0 <= ref_index < n:
        raise IndexError(f"reference sensor {ref_index} out of range for {n} sensors")
    eye = np.eye(n)
    keep = [j for j in range(n) if j != ref_index]
    return ReferenceConstraint(
        gradient=eye[ref_index][None, :],
        response=np.zeros(1),
        nullspace_basis=eye[:, keep],
        label=f"single:{ref_index}",
    )


def average_reference_constraint(shape: NetworkShape) -> ReferenceConstraint:
    """Pin the mean offset to zero. The basis is ``[-1^T; I]`` (zero-sum columns)."""
    n = shape.n_sensors
    return ReferenceConstraint(
        gradient=np.full((1, n), 1.0 / n),
        response=np.zeros(1),
        nullspace_basis=np.vstack([-np.ones((1, n - 1)), np.eye(n - 1)]),
        label="average",
    )


def parse_reference(spec: str, shape: NetworkShape) -> ReferenceConstraint:
    """Build a constraint from ``"average"`` or ``"single:<i>"``."""
    if spec == "average":
        return average_reference_constraint(shape)
    if spec.startswith("single:"):
        try:
            idx = int(spec.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad reference spec {spec!r}") from None
        return single_reference_constraint(shape, idx)
    raise ValueError(f"reference must be 'average' or 'single:<i>', got {spec!r}")


# ---------------------------------------------------------------------------
# Measurements
# ---------------------------------------------------------------------------


def as_measurements(y, shape: NetworkShape | None = None) -> np.ndarray:
    """Validate an ``N x K`` measurement array."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 2:
        raise ValueError(f"measurements must be a 2-D N x K array, got {y.ndim}-D")
    if shape is not None and y.shape != (shape.n_sensors, shape.n_measurements):
        raise ValueError(
            f"measurements have shape {y.shape}, expected ({shape.n_sensors}, {shape.n_measurements})"
        )
    if not np.all(np.isfinite(y)):
        raise ValueError("measurements contain non-finite values")
    return y


def vectorize(y: np.ndarray) -> np.ndarray:
    """Sensor-major stacking ``[y_1; y_2; ...; y_N]``."""
    return np.asarray(y).reshape(-1)


def unvectorize(v: np.ndarray, n_sensors: int) -> np.ndarray:
    return np.asarray(v).reshape(n_sensors, -1)


def offset_design(shape: NetworkShape) -> np.ndarray:
    """Dense ``I_N (x) 1_K``. Only meant for small reference computations."""
    return np.kron(np.eye(shape.n_sensors), np.ones((shape.n_measurements, 1)))


def project_measurements(y, gamma: ProjectionMatrix) -> np.ndarray:
    """Apply ``Gamma (x) I_K`` to the vectorized measurements, returned as ``(N-r) x K``."""
    y = as_measurements(y)
    if y.shape[0] != gamma.n_sensors:
        raise ValueError(f"measurements have {y.shape[0]} sensors, projector expects {gamma.n_sensors}")
    return gamma.gamma @ y
