"""L2-regularized logistic regression on sparse TF-IDF features.

Multi-label schemas get one-vs-rest binary models per class; multi-class
schemas get a single multinomial model.  Optimization is quasi-Newton
(L-BFGS) with the convergence criterion fixed at relative loss change
below 1e-6.  Loss and gradient are analytic so the finite-difference
harness can certify them like the neural backward passes.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

FTOL = 1e-6  # relative loss change at convergence


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def binary_loss_and_grad(theta: np.ndarray, X: sp.csr_matrix, y: np.ndarray,
                         l2: float) -> tuple[float, np.ndarray]:
    """Mean logistic loss + (l2/2n)*||w||^2 over (w, b) packed into theta."""
    n = X.shape[0]
    w, b = theta[:-1], theta[-1]
    z = X @ w + b
    # log(1+exp(-s)) with s = z where y=1, -z where y=0, stably
    s = np.where(y == 1, z, -z)
    loss = float(np.mean(np.maximum(-s, 0) + np.log1p(np.exp(-np.abs(s)))))
    loss += 0.5 * l2 / n * float(w @ w)
    p = _sigmoid(z)
    residual = (p - y) / n
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ residual + (l2 / n) * w
    grad[-1] = residual.sum()
    return loss, grad


def multinomial_loss_and_grad(theta: np.ndarray, X: sp.csr_matrix, Y: np.ndarray,
                              l2: float) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy + (l2/2n)*||W||^2; theta packs W (D,C) and b (C,)."""
    n, d = X.shape
    c = Y.shape[1]
    W = theta[: d * c].reshape(d, c)
    b = theta[d * c:]
    Z = X @ W + b
    zmax = Z.max(axis=1, keepdims=True)
    logsumexp = zmax + np.log(np.exp(Z - zmax).sum(axis=1, keepdims=True))
    loss = float(np.mean((logsumexp - Z)[Y > 0.5]))
    loss += 0.5 * l2 / n * float((W * W).sum())
    P = np.exp(Z - logsumexp)
    residual = (P - Y) / n
    grad = np.empty_like(theta)
    grad[: d * c] = (X.T @ residual).reshape(-1) + (l2 / n) * W.reshape(-1)
    grad[d * c:] = residual.sum(axis=0)
    return loss, grad


def fit_binary(X: sp.csr_matrix, y: np.ndarray, l2: float,
               max_iterations: int = 1000) -> tuple[np.ndarray, float, float]:
    """Returns (weights, bias, final loss)."""
    theta0 = np.zeros(X.shape[1] + 1)
    result = minimize(binary_loss_and_grad, theta0, args=(X, y, l2), jac=True,
                      method="L-BFGS-B",
                      options={"ftol": FTOL, "maxiter": max_iterations})
    return result.x[:-1], float(result.x[-1]), float(result.fun)


def fit_multinomial(X: sp.csr_matrix, Y: np.ndarray, l2: float,
                    max_iterations: int = 1000) -> tuple[np.ndarray, np.ndarray, float]:
    """Returns (W (D,C), b (C,), final loss)."""
    d, c = X.shape[1], Y.shape[1]
    theta0 = np.zeros(d * c + c)
    result = minimize(multinomial_loss_and_grad, theta0, args=(X, Y, l2), jac=True,
                      method="L-BFGS-B",
                      options={"ftol": FTOL, "maxiter": max_iterations})
    return result.x[: d * c].reshape(d, c), result.x[d * c:], float(result.fun)


def predict_binary(w: np.ndarray, b: float, X: sp.csr_matrix) -> np.ndarray:
    return _sigmoid(X @ w + b)


def predict_multinomial(W: np.ndarray, b: np.ndarray, X: sp.csr_matrix) -> np.ndarray:
    Z = X @ W + b
    zmax = Z.max(axis=1, keepdims=True)
    ex = np.exp(Z - zmax)
    return ex / ex.sum(axis=1, keepdims=True)
