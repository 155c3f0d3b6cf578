"""Soft-margin binary SVM trained with SMO.

The dual problem solved is::

    min_a  1/2 a^T Q a - sum(a)    s.t.  0 <= a_i <= C_i,  sum(y_i a_i) = 0

with ``Q_ij = y_i y_j K(x_i, x_j)``. Each step updates the maximal-violating
pair chosen with second-order information, and training stops once the
violation gap drops below ``tolerance``. The decision function is
``f(x) = sum_i a_i y_i K(x_i, x) + b``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dementia_svm.errors import DataError

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
SV_THRESHOLD = 1e-8
TAU = 1e-12
BOUND_RTOL = 1e-12


class KernelKind(enum.Enum):
    LINEAR = "linear"
    RBF = "rbf"


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind = KernelKind.LINEAR
    gamma: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if self.kind is KernelKind.RBF and not (self.gamma is not None and self.gamma > 0):
            raise DataError(f"RBF kernel needs gamma > 0, got {self.gamma}")

    @classmethod
    def rbf(cls, gamma: float) -> "KernelSpec":
        return cls(KernelKind.RBF, gamma)

    def matrix(self, a, b) -> np.ndarray:
        """Kernel matrix between the rows of ``a`` and ``b``."""
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        b = np.atleast_2d(np.asarray(b, dtype=np.float64))
        if a.shape[1] != b.shape[1]:
            raise DataError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
        dots = a @ b.T
        if self.kind is KernelKind.LINEAR:
            return dots
        sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2 * dots
        return np.exp(-self.gamma * np.maximum(sq, 0.0))


def kernel_eval(spec: KernelSpec, u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DataError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if spec.kind is KernelKind.LINEAR:
        return float(u @ v)
    diff = u - v
    return math.exp(-spec.gamma * float(diff @ diff))


@dataclass(frozen=True)
class TrainConfig:
    c: float = 1.0
    tolerance: float = 1e-3
    max_iters: int | None = None  # default 1000 * n
    positive_weight: float = 1.0  # C multiplier for the +1 class

    def __post_init__(self):
        if not (self.c > 0 and self.tolerance > 0 and self.positive_weight > 0):
            raise DataError("C, tolerance and positive_weight must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise DataError("max_iters must be positive")


@dataclass(frozen=True, eq=False)
class SvmModel:
    kernel: KernelSpec
    support_vectors: np.ndarray  # (m, d)
    dual_coefs: np.ndarray  # (m,) alpha_i * y_i
    bias: float
    c: float
    converged: bool = True
    iterations: int = 0
    positive_weight: float = 1.0

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def decision_values(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise DataError(f"expected {self.dim} features, got {x.shape[1]}")
        if len(self.dual_coefs) == 0:
            return np.full(x.shape[0], self.bias)
        return self.kernel.matrix(x, self.support_vectors) @ self.dual_coefs + self.bias

    def predict(self, x) -> np.ndarray:
        """Labels in {-1, +1}; a decision value of exactly 0 maps to +1."""
        return np.where(self.decision_values(x) >= 0, 1, -1)


def decision_value(model: SvmModel, x) -> float:
    return float(model.decision_values(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def predict(model: SvmModel, x) -> int:
    return 1 if decision_value(model, x) >= 0 else -1


@dataclass
class DualSolution:
    """Full solver state, kept for diagnostics and KKT checks."""

    alpha: np.ndarray
    gradient: np.ndarray  # Q alpha - 1
    bias: float
    upper: np.ndarray
    converged: bool
    iterations: int
    gap: float = field(default=0.0)


def _check_training_data(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y)
    if x.shape[0] != y.shape[0]:
        raise DataError(f"{x.shape[0]} examples but {y.shape[0]} labels")
    if not np.all(np.isin(y, (-1, 1))):
        raise DataError("labels must be -1 or +1")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite feature value in training data")
    if not ((y == 1).any() and (y == -1).any()):
        raise DataError("training data must contain both classes")
    return x, y.astype(np.float64)


def solve_dual(kernel_matrix: np.ndarray, y: np.ndarray, config: TrainConfig) -> DualSolution:
    """SMO on a precomputed kernel matrix."""
    n = len(y)
    q = (y[:, None] * y[None, :]) * kernel_matrix
    qd = np.diag(q).copy()
    upper = np.where(y > 0, config.c * config.positive_weight, config.c)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    max_iters = config.max_iters or 1000 * n

    converged = False
    gap = math.inf
    it = 0
    while it < max_iters:
        # I_up: alpha can move so that y_t * alpha_t increases; I_low: decreases
        at_upper = alpha >= upper
        at_lower = alpha <= 0
        i_up = np.where(y > 0, ~at_upper, ~at_lower)
        i_low = np.where(y > 0, ~at_lower, ~at_upper)
        score = -y * grad
        up_scores = np.where(i_up, score, -np.inf)
        i = int(np.argmax(up_scores))
        m_val = up_scores[i]
        low_scores = np.where(i_low, score, np.inf)
        big_m = low_scores.min()
        gap = m_val - big_m
        if gap < config.tolerance:
            converged = True
            break

        # second-order choice of j among violating members of I_low
        b = m_val - score
        cand = i_low & (b > 0)
        quad = qd[i] + qd - 2 * y[i] * y * q[i]
        quad = np.where(quad > 0, quad, TAU)
        gain = np.where(cand, -(b * b) / quad, np.inf)
        j = int(np.argmin(gain))

        ai_old, aj_old = alpha[i], alpha[j]
        ci, cj = upper[i], upper[j]
        if y[i] != y[j]:
            qc = qd[i] + qd[j] + 2 * q[i, j]
            qc = qc if qc > 0 else TAU
            delta = (-grad[i] - grad[j]) / qc
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > ci - cj:
                if ai > ci:
                    ai, aj = ci, ci - diff
            elif aj > cj:
                aj, ai = cj, cj + diff
        else:
            qc = qd[i] + qd[j] - 2 * q[i, j]
            qc = qc if qc > 0 else TAU
            delta = (grad[i] - grad[j]) / qc
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > ci:
                if ai > ci:
                    ai, aj = ci, total - ci
            elif aj < 0:
                aj, ai = 0.0, total
            if total > cj:
                if aj > cj:
                    aj, ai = cj, total - cj
            elif ai < 0:
                ai, aj = 0.0, total
        ai, aj = _snap(ai, ci), _snap(aj, cj)
        alpha[i], alpha[j] = ai, aj
        grad += q[i] * (ai - ai_old) + q[j] * (aj - aj_old)
        it += 1

    if not converged:
        log.warning("SMO stopped after %d iterations with gap %.3g", it, gap)
    return DualSolution(alpha, grad, _bias(alpha, grad, y, upper), upper, converged, it, gap)


def _snap(a: float, c: float) -> float:
    # rounding in the clipped update leaves values like C - 1e-16; treat those as bound
    if a <= c * BOUND_RTOL:
        return 0.0
    if a >= c * (1 - BOUND_RTOL):
        return c
    return a


def _bias(alpha, grad, y, upper) -> float:
    """Mean over free vectors of -y_i G_i, else midpoint of the feasible interval."""
    yg = y * grad
    free = (alpha > 0) & (alpha < upper)
    if free.any():
        rho = yg[free].mean()
    else:
        at_upper = alpha >= upper
        # rho must satisfy lb <= rho <= ub
        ub_set = (at_upper & (y < 0)) | (~at_upper & (y > 0))
        lb_set = (at_upper & (y > 0)) | (~at_upper & (y < 0))
        ub = yg[ub_set].min() if ub_set.any() else math.inf
        lb = yg[lb_set].max() if lb_set.any() else -math.inf
        rho = (ub + lb) / 2
    return float(-rho) + 0.0  # no negative zero in reports


def train(x, y, kernel: KernelSpec, config: TrainConfig = TrainConfig()) -> SvmModel:
    """Fit an SVM on rows of ``x`` with labels ``y`` in {-1, +1}."""
    x, yf = _check_training_data(x, y)
    solution = solve_dual(kernel.matrix(x, x), yf, config)
    keep = solution.alpha > SV_THRESHOLD
    return SvmModel(
        kernel=kernel,
        support_vectors=x[keep].copy(),
        dual_coefs=(solution.alpha * yf)[keep],
        bias=solution.bias,
        c=config.c,
        converged=solution.converged,
        iterations=solution.iterations,
        positive_weight=config.positive_weight,
    )


def dual_objective(alpha, y, kernel_matrix) -> float:
    """Dual objective to maximize: sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij."""
    ay = np.asarray(alpha) * np.asarray(y)
    return float(np.sum(alpha) - 0.5 * ay @ kernel_matrix @ ay)


# --------------------------------------------------------------------------
# serialization


def save_model(model: SvmModel, path) -> None:
    """Plain-text model file.

    Header lines are ``key value``; each ``sv`` line holds the dual
    coefficient followed by the feature values, all in full-precision decimal.
    """
    lines = [
        f"dementia-svm-model {MODEL_FORMAT_VERSION}",
        f"kernel {model.kernel.kind.value}",
        f"gamma {repr(float(model.kernel.gamma)) if model.kernel.gamma is not None else 'none'}",
        f"c {model.c!r}",
        f"positive_weight {model.positive_weight!r}",
        f"bias {model.bias!r}",
        f"dim {model.dim}",
        f"n_sv {len(model.dual_coefs)}",
    ]
    for coef, sv in zip(model.dual_coefs, model.support_vectors):
        lines.append("sv " + " ".join(repr(float(v)) for v in (coef, *sv)))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> SvmModel:
    header: dict[str, str] = {}
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        key, _, rest = line.partition(" ")
        if key == "sv":
            rows.append([float(v) for v in rest.split()])
        else:
            header[key] = rest.strip()
    try:
        version = int(header["dementia-svm-model"])
        if version != MODEL_FORMAT_VERSION:
            raise DataError(f"{path}: unsupported model format version {version}")
        kind = KernelKind(header["kernel"])
        gamma = None if header["gamma"] == "none" else float(header["gamma"])
        dim = int(header["dim"])
        n_sv = int(header["n_sv"])
        model = SvmModel(
            kernel=KernelSpec(kind, gamma),
            support_vectors=np.array([r[1:] for r in rows]).reshape(n_sv, dim),
            dual_coefs=np.array([r[0] for r in rows]),
            bias=float(header["bias"]),
            c=float(header["c"]),
            positive_weight=float(header.get("positive_weight", "1.0")),
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed model file ({exc})") from exc
    if len(rows) != n_sv:
        raise DataError(f"{path}: header says {n_sv} support vectors, found {len(rows)}")
    return model
