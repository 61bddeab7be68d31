"""Support vector classifier trained by sequential minimal optimization.

Used as the second, cheap validity filter on generated candidates before
any evaluator budget is spent.  Binary labels are {+1, -1}; inputs are the
[0, 1]-normalized parameter vectors, the same preprocessing the neural
discriminator sees.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"       # "linear" | "rbf"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError("unknown kernel %r" % self.kind)
        if self.kind == "rbf" and not self.gamma > 0:
            raise ValueError("gamma must be positive")


def scaled_gamma(X) -> float:
    """1 / (n_features * variance) heuristic for the RBF width."""
    X = np.asarray(X, dtype=float)
    var = float(X.var())
    if var <= 0:
        var = 1.0
    return 1.0 / (X.shape[1] * var)


def kernel_matrix(kernel: KernelSpec, A, B) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if kernel.kind == "linear":
        return A @ B.T
    sq = (
        np.sum(A ** 2, axis=1)[:, None]
        + np.sum(B ** 2, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    return np.exp(-kernel.gamma * np.maximum(sq, 0.0))


@dataclass
class SvcModel:
    support_vectors: np.ndarray   # (m, d)
    dual_coef: np.ndarray         # alpha_i * y_i, (m,)
    intercept: float
    kernel: KernelSpec
    C: float
    converged: bool = True

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if len(self.support_vectors) == 0:
            return np.full(len(X), self.intercept)
        K = kernel_matrix(self.kernel, X, self.support_vectors)
        return K @ self.dual_coef + self.intercept

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision(X) >= 0.0, 1, -1)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kernel": {"kind": self.kernel.kind, "gamma": self.kernel.gamma},
            "C": self.C,
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "intercept": self.intercept,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SvcModel":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError("unsupported SVC schema version")
        return cls(
            support_vectors=np.asarray(data["support_vectors"], dtype=float),
            dual_coef=np.asarray(data["dual_coef"], dtype=float),
            intercept=float(data["intercept"]),
            kernel=KernelSpec(**data["kernel"]),
            C=float(data["C"]),
            converged=bool(data["converged"]),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def fit_svm(X, y, kernel: KernelSpec, C=1.0, tol=1e-3, max_iter=200000, seed=0):
    """SMO on the dual problem; y in {+1, -1}.

    Converged when a full sweep finds no KKT violation beyond ``tol``;
    hitting ``max_iter`` returns the best-so-far model flagged unconverged.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if set(np.unique(y)) - {1.0, -1.0}:
        raise ValueError("labels must be +1/-1")
    if len(np.unique(y)) < 2:
        raise ValueError("both classes must be present")
    if not C > 0:
        raise ValueError("C must be positive")

    rng = np.random.default_rng(seed)
    K = kernel_matrix(kernel, X, X)
    alpha = np.zeros(n)
    state = {"b": 0.0, "iters": 0}

    def take_step(i, j, E_i):
        if i == j:
            return False
        E_j = float(K[j] @ (alpha * y) + state["b"] - y[j])
        a_i_old, a_j_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            L = max(0.0, a_j_old - a_i_old)
            H = min(C, C + a_j_old - a_i_old)
        else:
            L = max(0.0, a_i_old + a_j_old - C)
            H = min(C, a_i_old + a_j_old)
        if H - L < 1e-12:
            return False
        eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
        if eta >= 0:
            return False
        a_j = float(np.clip(a_j_old - y[j] * (E_i - E_j) / eta, L, H))
        if abs(a_j - a_j_old) < 1e-12 * (a_j + a_j_old + 1e-12):
            return False
        a_i = a_i_old + y[i] * y[j] * (a_j_old - a_j)
        alpha[i], alpha[j] = a_i, a_j
        b = state["b"]
        b1 = b - E_i - y[i] * (a_i - a_i_old) * K[i, i] - y[j] * (a_j - a_j_old) * K[i, j]
        b2 = b - E_j - y[i] * (a_i - a_i_old) * K[i, j] - y[j] * (a_j - a_j_old) * K[j, j]
        if 0 < a_i < C:
            state["b"] = b1
        elif 0 < a_j < C:
            state["b"] = b2
        else:
            state["b"] = 0.5 * (b1 + b2)
        return True

    def examine(i):
        E_i = float(K[i] @ (alpha * y) + state["b"] - y[i])
        r = E_i * y[i]
        if not ((r < -tol and alpha[i] < C) or (r > tol and alpha[i] > 0)):
            return False
        # second-choice hierarchy: best |E_i - E_j| over non-bound points,
        # then all non-bound points, then everything, each in random order
        non_bound = np.flatnonzero((alpha > 1e-12) & (alpha < C - 1e-12))
        if len(non_bound):
            E_nb = K[non_bound] @ (alpha * y) + state["b"] - y[non_bound]
            j = int(non_bound[np.argmax(np.abs(E_nb - E_i))])
            if take_step(i, j, E_i):
                return True
            for j in rng.permutation(non_bound):
                if take_step(i, int(j), E_i):
                    return True
        for j in rng.permutation(n):
            if take_step(i, int(j), E_i):
                return True
        return False

    examine_all = True
    while state["iters"] < max_iter:
        num_changed = 0
        if examine_all:
            scan = rng.permutation(n)
        else:
            scan = rng.permutation(
                np.flatnonzero((alpha > 1e-12) & (alpha < C - 1e-12)))
        for i in scan:
            state["iters"] += 1
            num_changed += examine(int(i))
        if examine_all:
            if num_changed == 0:
                break  # full clean sweep: all KKT conditions hold within tol
            examine_all = False
        elif num_changed == 0:
            examine_all = True
    b = state["b"]
    converged = state["iters"] < max_iter

    mask = alpha > 1e-8
    return SvcModel(
        support_vectors=X[mask].copy(),
        dual_coef=(alpha * y)[mask].copy(),
        intercept=float(b),
        kernel=kernel,
        C=float(C),
        converged=converged,
    )


def train_svc(X_train, y_train, X_test, y_test, kernel=None, C=1.0, seed=0):
    """Fit on the train split and report held-out accuracy.

    ``kernel=None`` selects RBF with the scaled-gamma heuristic.
    Labels may be {0, 1} or {+1, -1}.
    """
    y_train = np.where(np.asarray(y_train, dtype=float) > 0, 1.0, -1.0)
    y_test = np.where(np.asarray(y_test, dtype=float) > 0, 1.0, -1.0)
    if kernel is None:
        kernel = KernelSpec(kind="rbf", gamma=scaled_gamma(X_train))
    model = fit_svm(X_train, y_train, kernel, C=C, seed=seed)
    accuracy = float(np.mean(model.predict(X_test) == y_test)) if len(y_test) else float("nan")
    return model, accuracy


def svc_filter(model: SvcModel, candidates) -> list:
    """Indices of candidates the SVC predicts valid (decision >= 0)."""
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.size == 0:
        return []
    keep = model.decision(candidates) >= 0.0
    return [int(i) for i in np.flatnonzero(keep)]
