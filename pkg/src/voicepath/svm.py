"""Soft-margin SVM trained by sequential minimal optimization.

Working-set selection follows the second-order rule of Fan, Chen & Lin
(2005); the dual is solved on a precomputed kernel matrix, which is fine
at the corpus sizes used here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegenerateInputError, ParameterError

TAU = 1e-12


def kernel_matrix(A, B, kernel: str, gamma: float) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if kernel == "linear":
        return A @ B.T
    if kernel == "rbf":
        sq = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise ParameterError(f"kernel must be 'linear' or 'rbf', got {kernel!r}")


@dataclass
class SVMSolution:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i for each support vector
    bias: float
    kernel: str
    gamma: float
    C: float
    n_iter: int
    kkt_gap: float
    train_alpha: np.ndarray = None

    def decision_function(self, X) -> np.ndarray:
        K = kernel_matrix(np.atleast_2d(X), self.support_vectors, self.kernel, self.gamma)
        return K @ self.dual_coef + self.bias

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0).astype(int)


def smo_train(X, labels, C: float = 1.0, kernel: str = "rbf", gamma: float = None,
              tol: float = 1e-3, max_iter: int = 200_000) -> SVMSolution:
    """Solve ``min 1/2 a'Qa - e'a`` s.t. ``0 <= a <= C``, ``y'a = 0``.

    ``labels`` are 0/1 and mapped to -1/+1. Stops when the maximal KKT
    violation ``m(a) - M(a)`` drops below ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    lab = np.asarray(labels)
    if set(np.unique(lab)) - {0, 1}:
        raise ParameterError("labels must be 0/1")
    if len(np.unique(lab)) < 2:
        raise DegenerateInputError("SVM training needs at least one example of each class")
    if C <= 0:
        raise ParameterError("C must be positive")
    gamma = 1.0 / X.shape[1] if gamma is None else float(gamma)
    y = np.where(lab == 1, 1.0, -1.0)
    n = y.size
    K = kernel_matrix(X, X, kernel, gamma)
    Q = (y[:, None] * y[None, :]) * K
    QD = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)

    it = 0
    gap = np.inf
    while it < max_iter:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        score = -y * G
        if not up.any() or not low.any():
            gap = 0.0
            break
        su = np.where(up, score, -np.inf)
        i = int(np.argmax(su))
        g_max = su[i]
        g_min = np.min(np.where(low, score, np.inf))
        gap = g_max - g_min
        if gap < tol:
            break
        b = g_max - score
        cand = low & (b > 0)
        a = QD[i] + QD - 2.0 * y[i] * y * Q[i]  # K_ii + K_tt - 2 K_it
        a = np.where(a > 0, a, TAU)
        obj = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(obj))

        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(QD[i] + QD[j] + 2.0 * Q[i, j], TAU)
            delta = (-G[i] - G[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = max(QD[i] + QD[j] - 2.0 * Q[i, j], TAU)
            delta = (G[i] - G[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        G += Q[:, i] * (ai - ai_old) + Q[:, j] * (aj - aj_old)
        it += 1
    else:
        raise ConvergenceError(
            f"SMO did not reach KKT tolerance {tol} in {max_iter} iterations (violation {gap:.3g})",
            max_violation=gap,
        )

    free = (alpha > 0) & (alpha < C)
    yG = y * G
    if free.any():
        rho = float(np.mean(yG[free]))
    else:
        ub = np.min(np.where(((y > 0) & (alpha >= C)) | ((y < 0) & (alpha <= 0)), yG, np.inf))
        lb = np.max(np.where(((y > 0) & (alpha <= 0)) | ((y < 0) & (alpha >= C)), yG, -np.inf))
        rho = float((ub + lb) / 2)
    sv = alpha > 0
    return SVMSolution(X[sv].copy(), (alpha * y)[sv], -rho, kernel, gamma, float(C), it, float(gap), alpha)


def kkt_violations(sol: SVMSolution, X, labels, tol: float = 1e-3) -> int:
    """Count training points violating the soft-margin KKT conditions by more
    than ``tol``. ``X`` and ``labels`` must be the training set."""
    y = np.where(np.asarray(labels) == 1, 1.0, -1.0)
    yf = y * sol.decision_function(X)
    alpha = sol.train_alpha
    bad = ((alpha <= 0) & (yf < 1 - tol)) | ((alpha >= sol.C) & (yf > 1 + tol)) | (
        (alpha > 0) & (alpha < sol.C) & (np.abs(yf - 1) > tol)
    )
    return int(np.count_nonzero(bad))
