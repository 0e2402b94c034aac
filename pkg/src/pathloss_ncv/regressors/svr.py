"""Epsilon-insensitive support vector regression with an RBF kernel.

The dual is solved by sequential minimal optimization over the 2n variables
(alpha, alpha*) with second-order working-set selection. Training stops when
the maximal KKT violation drops below `tol`.
"""

import logging
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_serializer, field_validator

from pathloss_ncv.exceptions import ConvergenceError, HyperparameterError
from pathloss_ncv.types import Dataset, coerce_array, serialize_array

logger = logging.getLogger(__name__)

TAU = 1e-12


class SvrModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    family: Literal["SVR"] = "SVR"
    dual_coefficients: np.ndarray
    support_vectors: np.ndarray
    support_indices: list[int]
    bias: float
    rbf_gamma: float
    epsilon: float
    C: float
    n_iter: int
    max_kkt_violation: float

    @field_validator("dual_coefficients", mode="before")
    def coefficients_to_array(cls, v):
        return coerce_array(v, np.float64, ndim=1)

    @field_validator("support_vectors", mode="before")
    def vectors_to_array(cls, v):
        array = np.array(v, dtype=np.float64)
        if array.size == 0:
            array = array.reshape(0, 0)
        return coerce_array(array, np.float64, ndim=2)

    @field_serializer("dual_coefficients", "support_vectors")
    def arrays_to_lists(self, array: np.ndarray):
        return serialize_array(array)

    def __eq__(self, other):
        if not isinstance(other, SvrModel):
            return False
        return (
            np.array_equal(self.dual_coefficients, other.dual_coefficients)
            and np.array_equal(self.support_vectors, other.support_vectors)
            and self.bias == other.bias
            and self.rbf_gamma == other.rbf_gamma
        )


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """K(a_i, b_j) = exp(-gamma * ||a_i - b_j||^2)."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * a @ b.T
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def dual_objective(
    beta: np.ndarray, kernel: np.ndarray, targets: np.ndarray, epsilon: float
) -> float:
    """Dual objective (to maximize) in terms of beta = alpha - alpha*."""
    return float(
        -0.5 * beta @ kernel @ beta - epsilon * np.abs(beta).sum() + targets @ beta
    )


def _solve(
    kernel: np.ndarray,
    targets: np.ndarray,
    C: float,
    epsilon: float,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, float, int, float]:
    n = targets.shape[0]
    y = np.concatenate([np.ones(n), -np.ones(n)])
    alpha = np.zeros(2 * n)
    grad = np.concatenate([epsilon - targets, epsilon + targets])
    diag = np.diag(kernel)
    base = np.concatenate([np.arange(n), np.arange(n)])

    def q_row(t: int) -> np.ndarray:
        k = kernel[base[t]]
        return y[t] * y * np.concatenate([k, k])

    violation = np.inf
    for iteration in range(max_iter):
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        minus_yg = -y * grad
        if not up.any() or not low.any():
            violation = 0.0
            break
        g_max = np.max(np.where(up, minus_yg, -np.inf))
        g_min = np.min(np.where(low, minus_yg, np.inf))
        violation = g_max - g_min
        if violation < tol:
            break
        i = int(np.argmax(np.where(up, minus_yg, -np.inf)))
        # second-order choice of j among violating I_low candidates
        diff = g_max - minus_yg
        quad = diag[base[i]] + diag[base] - 2.0 * kernel[base[i], base]
        quad = np.where(quad > 0, quad, TAU)
        gain = np.where(low & (diff > 0), -(diff**2) / quad, np.inf)
        j = int(np.argmin(gain))

        q_i = q_row(i)
        q_j = q_row(j)
        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad_coef = diag[base[i]] + diag[base[j]] + 2.0 * q_i[j]
            quad_coef = quad_coef if quad_coef > 0 else TAU
            delta = (-grad[i] - grad[j]) / quad_coef
            difference = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if difference > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = difference
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -difference
            if difference > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - difference
            elif alpha[j] > C:
                alpha[j] = C
                alpha[i] = C + difference
        else:
            quad_coef = diag[base[i]] + diag[base[j]] - 2.0 * q_i[j]
            quad_coef = quad_coef if quad_coef > 0 else TAU
            delta = (grad[i] - grad[j]) / quad_coef
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            elif alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = total
        grad += q_i * (alpha[i] - old_i) + q_j * (alpha[j] - old_j)
    else:
        raise ConvergenceError(
            f"SMO did not reach a KKT violation below {tol} within {max_iter} iterations (last violation {violation:.3g})."
        )

    rho = _rho(alpha, grad, y, C)
    beta = alpha[:n] - alpha[n:]
    return beta, -rho, iteration, float(violation)


def _rho(alpha: np.ndarray, grad: np.ndarray, y: np.ndarray, C: float) -> float:
    yg = y * grad
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(yg[free].mean())
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2)


def svr_fit(
    train: Dataset,
    C: float = 1.0,
    epsilon: float = 0.1,
    rbf_gamma: float = 1.0 / 6.0,
    tol: float = 1e-3,
    seed: int = 0,
    max_iter: Optional[int] = None,
) -> SvrModel:
    """Fits an RBF epsilon-SVR on (already normalized) training features.

    The solver is deterministic; `seed` is accepted for the common estimator
    contract. `max_iter` defaults to max(100000, 100 n) SMO steps, after which
    a ConvergenceError is raised.
    """
    if C <= 0 or epsilon < 0 or rbf_gamma <= 0 or tol <= 0:
        raise HyperparameterError(
            f"Invalid SVR hyperparameters C={C}, epsilon={epsilon}, rbf_gamma={rbf_gamma}, tol={tol}."
        )
    n = train.n
    if max_iter is None:
        max_iter = max(100_000, 100 * n)
    kernel = rbf_kernel(train.features, train.features, rbf_gamma)
    beta, bias, n_iter, violation = _solve(
        kernel, np.asarray(train.targets), C, epsilon, tol, max_iter
    )
    logger.debug(
        "SMO finished after %d iterations (KKT violation %.3g)", n_iter, violation
    )
    support = np.flatnonzero(beta != 0)
    return SvrModel(
        dual_coefficients=beta[support],
        support_vectors=train.features[support].reshape(support.size, train.features.shape[1]),
        support_indices=support.tolist(),
        bias=bias,
        rbf_gamma=rbf_gamma,
        epsilon=epsilon,
        C=C,
        n_iter=n_iter,
        max_kkt_violation=violation,
    )


def svr_predict(model: SvrModel, features: np.ndarray) -> np.ndarray:
    """sum_k coef_k K(sv_k, x) + bias for every row of `features`."""
    features = np.atleast_2d(features)
    if model.dual_coefficients.size == 0:
        return np.full(features.shape[0], model.bias)
    kernel = rbf_kernel(features, model.support_vectors, model.rbf_gamma)
    return kernel @ model.dual_coefficients + model.bias
