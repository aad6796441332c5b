"""Desk-scale differentiable models operating on flat parameter vectors.

Every model exposes ``dim``, ``init_params(rng)``, ``loss(theta, X, y)`` and
``grad(theta, X, y)``; classifiers also provide ``accuracy``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, softmax


class QuadraticModel:
    """Per-sample loss ``0.5 (theta - v)^T A (theta - v)`` with a shared SPD ``A``.

    Samples ``v`` are the rows of the feature matrix; labels are ignored.
    """

    def __init__(self, hessian):
        a = np.asarray(hessian, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("hessian must be square")
        if not np.allclose(a, a.T):
            raise ValueError("hessian must be symmetric")
        self.hessian = a
        self.dim = a.shape[0]

    @classmethod
    def with_spectrum(cls, eigenvalues, rng) -> "QuadraticModel":
        eig = np.asarray(eigenvalues, dtype=float)
        q, _ = np.linalg.qr(rng.standard_normal((eig.size, eig.size)))
        a = (q * eig) @ q.T
        return cls(0.5 * (a + a.T))

    def init_params(self, rng=None):
        return np.zeros(self.dim)

    def loss(self, theta, X, y=None):
        diff = theta - X
        return 0.5 * float(np.mean(np.einsum("ni,ij,nj->n", diff, self.hessian, diff)))

    def grad(self, theta, X, y=None):
        return self.hessian @ (theta - X.mean(axis=0))

    def minimizer(self, X):
        return X.mean(axis=0)

    def accuracy(self, theta, X, y):
        return float("nan")


class LogisticModel:
    """Multinomial logistic regression with an intercept and optional L2 penalty.

    Parameters are the row-major flattening of a ``(p + 1) x C`` weight
    matrix whose last row is the intercept.
    """

    def __init__(self, n_features: int, n_classes: int, l2: float = 0.0):
        self.n_features = n_features
        self.n_classes = n_classes
        self.l2 = l2
        self.dim = (n_features + 1) * n_classes

    def init_params(self, rng=None):
        return np.zeros(self.dim)

    def _weights(self, theta):
        return theta.reshape(self.n_features + 1, self.n_classes)

    def _logits(self, theta, X):
        w = self._weights(theta)
        return X @ w[:-1] + w[-1]

    def loss(self, theta, X, y):
        z = self._logits(theta, X)
        nll = logsumexp(z, axis=1) - z[np.arange(len(y)), y]
        return float(np.mean(nll) + 0.5 * self.l2 * theta @ theta)

    def grad(self, theta, X, y):
        p = softmax(self._logits(theta, X), axis=1)
        p[np.arange(len(y)), y] -= 1.0
        p /= len(y)
        g = np.empty((self.n_features + 1, self.n_classes))
        g[:-1] = X.T @ p
        g[-1] = p.sum(axis=0)
        return g.ravel() + self.l2 * theta

    def predict(self, theta, X):
        return np.argmax(self._logits(theta, X), axis=1)

    def accuracy(self, theta, X, y):
        return float(np.mean(self.predict(theta, X) == y))


class MLPModel:
    """One tanh hidden layer followed by a softmax output."""

    def __init__(self, n_features: int, hidden: int, n_classes: int, l2: float = 0.0,
                 init_scale: float = 0.5):
        self.n_features = n_features
        self.hidden = hidden
        self.n_classes = n_classes
        self.l2 = l2
        self.init_scale = init_scale
        self._shapes = [(n_features, hidden), (hidden,), (hidden, n_classes), (n_classes,)]
        self.dim = int(sum(np.prod(s) for s in self._shapes))

    def _unpack(self, theta):
        out, i = [], 0
        for s in self._shapes:
            n = int(np.prod(s))
            out.append(theta[i:i + n].reshape(s))
            i += n
        return out

    def init_params(self, rng):
        w1 = rng.standard_normal((self.n_features, self.hidden)) * (
            self.init_scale / np.sqrt(self.n_features))
        w2 = rng.standard_normal((self.hidden, self.n_classes)) * (
            self.init_scale / np.sqrt(self.hidden))
        return np.concatenate([w1.ravel(), np.zeros(self.hidden), w2.ravel(),
                               np.zeros(self.n_classes)])

    def _forward(self, theta, X):
        w1, b1, w2, b2 = self._unpack(theta)
        a = np.tanh(X @ w1 + b1)
        return a, a @ w2 + b2

    def loss(self, theta, X, y):
        _, z = self._forward(theta, X)
        nll = logsumexp(z, axis=1) - z[np.arange(len(y)), y]
        return float(np.mean(nll) + 0.5 * self.l2 * theta @ theta)

    def grad(self, theta, X, y):
        w1, b1, w2, b2 = self._unpack(theta)
        a, z = self._forward(theta, X)
        dz = softmax(z, axis=1)
        dz[np.arange(len(y)), y] -= 1.0
        dz /= len(y)
        gw2 = a.T @ dz
        gb2 = dz.sum(axis=0)
        da = (dz @ w2.T) * (1.0 - a**2)
        gw1 = X.T @ da
        gb1 = da.sum(axis=0)
        g = np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])
        return g + self.l2 * theta

    def predict(self, theta, X):
        return np.argmax(self._forward(theta, X)[1], axis=1)

    def accuracy(self, theta, X, y):
        return float(np.mean(self.predict(theta, X) == y))
