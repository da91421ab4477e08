"""Binary-relevance logistic regression, trained by ML or by MAP.

All objectives follow the minimization convention. For ``N`` samples:

* ML:  ``nll(W, b) + l2 / 2 * ||W||_F^2``
* MAP: ``nll(W, b) + lam^2 / 2 * ||W - W_kb||_F^2 + nu * ||b||^2``

where ``nll`` is the summed (not averaged) negative log-likelihood over
samples and target tags. ``X`` may be a dense array or a scipy sparse
matrix; ``Y`` is dense or sparse binary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.optimize
import scipy.sparse as sp
from scipy.special import expit

__all__ = [
    "LogisticModel",
    "PriorSpec",
    "TrainConfig",
    "SourceTagCounts",
    "NumericalError",
    "predict_proba",
    "decision_function",
    "nll",
    "ml_loss",
    "map_loss",
    "grad",
    "train",
    "elicit_lambda",
    "source_tag_counts",
    "stat_score",
]

logger = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "gd", "lbfgs", "newton")


class NumericalError(FloatingPointError):
    """Training produced a non-finite objective."""


@dataclass
class LogisticModel:
    W: np.ndarray
    b: np.ndarray
    sources: list[str] = field(default_factory=list)
    targets: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.W = np.array(self.W, dtype=float)
        self.b = np.array(self.b, dtype=float).reshape(-1)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError("W must be |T|x|S| and b of length |T|")
        if not self.sources:
            self.sources = [f"s{j}" for j in range(self.W.shape[1])]
        if not self.targets:
            self.targets = [f"t{i}" for i in range(self.W.shape[0])]
        if len(self.sources) != self.W.shape[1] or len(self.targets) != self.W.shape[0]:
            raise ValueError("vocabulary sizes do not match W")

    @classmethod
    def zeros(cls, sources: Sequence[str], targets: Sequence[str]) -> "LogisticModel":
        return cls(np.zeros((len(targets), len(sources))), np.zeros(len(targets)),
                   list(sources), list(targets))

    def copy(self) -> "LogisticModel":
        return LogisticModel(self.W.copy(), self.b.copy(), list(self.sources), list(self.targets))

    def to_file(self, path: str | Path) -> None:
        """Text checkpoint; floats are written with ``repr`` so reloads are exact."""
        lines = ["[VOCAB_S]", *self.sources, "[VOCAB_T]", *self.targets, "[W]"]
        lines += [" ".join(repr(float(x)) for x in row) for row in self.W]
        lines += ["[B]", " ".join(repr(float(x)) for x in self.b)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path: str | Path) -> "LogisticModel":
        sec: dict[str, list[str]] = {}
        current = None
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                sec[current] = []
            elif current is not None:
                sec[current].append(line)
        missing = {"VOCAB_S", "VOCAB_T", "W", "B"} - sec.keys()
        if missing:
            raise ValueError(f"{path}: missing checkpoint sections {sorted(missing)}")
        sources, targets = sec["VOCAB_S"], sec["VOCAB_T"]
        W = np.array([[float(x) for x in ln.split()] for ln in sec["W"] if ln.strip()])
        W = W.reshape(len(targets), len(sources))
        b_line = " ".join(sec["B"]).split()
        return cls(W, np.array([float(x) for x in b_line]), sources, targets)


@dataclass
class PriorSpec:
    """Gaussian prior on W centred at ``mean`` with precision ``lam**2``; ``nu`` weighs ||b||^2."""

    mean: np.ndarray
    lam: float
    nu: float = 1.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")


@dataclass
class TrainConfig:
    mode: str = "ML"
    lr: float = 0.5
    epochs: int = 500
    batch_size: int = 100_000
    l2: float = 1.0
    optimizer: str = "adam"
    seed: int = 0
    tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        self.mode = self.mode.upper()
        if self.mode not in ("ML", "MAP"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr > 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("need lr > 0, epochs >= 1, batch_size >= 1")


@dataclass
class SourceTagCounts:
    counts: np.ndarray
    n_samples: int

    @property
    def mean_tags(self) -> float:
        if self.n_samples == 0:
            return 0.0
        return float(self.counts.sum()) / self.n_samples


def source_tag_counts(X) -> SourceTagCounts:
    counts = np.asarray(X.sum(axis=0)).ravel().astype(float)
    return SourceTagCounts(counts, X.shape[0])


def elicit_lambda(counts: SourceTagCounts | float) -> float:
    """Prior precision from the mean number of source tags per sample.

    Solves ``2 / sqrt(lam) = 5 / n_bar``.
    """
    n_bar = counts.mean_tags if isinstance(counts, SourceTagCounts) else float(counts)
    if not n_bar > 0:
        raise ValueError("mean number of source tags must be positive")
    return (2.0 * n_bar / 5.0) ** 2


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


def _dense(Y) -> np.ndarray:
    return Y.toarray() if sp.issparse(Y) else np.asarray(Y, dtype=float)


def _logits(W, b, X) -> np.ndarray:
    return np.asarray(X @ W.T) + b


def decision_function(model: LogisticModel, X) -> np.ndarray:
    """Logits ``X W^T + b``; ranks like ``predict_proba`` without saturating."""
    if not sp.issparse(X) and np.ndim(X) == 1:
        return model.W @ np.asarray(X, dtype=float) + model.b
    return _logits(model.W, model.b, X)


def predict_proba(model: LogisticModel, X) -> np.ndarray:
    """sigmoid(X W^T + b); a 1-D ``x`` gives a 1-D result."""
    if not sp.issparse(X) and np.ndim(X) == 1:
        return expit(model.W @ np.asarray(X, dtype=float) + model.b)
    return expit(_logits(model.W, model.b, X))


def _nll(W, b, X, Y) -> float:
    if X.shape[0] == 0:
        return 0.0
    z = _logits(W, b, X)
    return float(np.sum(np.logaddexp(0.0, z) - Y * z))


def nll(model: LogisticModel, X, Y) -> float:
    _check(model, X, Y)
    return _nll(model.W, model.b, X, _dense(Y))


def ml_loss(model: LogisticModel, X, Y, l2: float = 1.0) -> float:
    return nll(model, X, Y) + 0.5 * l2 * float(np.sum(model.W ** 2))


def map_loss(model: LogisticModel, X, Y, prior: PriorSpec) -> float:
    _check_prior(model, prior)
    reg = 0.5 * prior.lam ** 2 * float(np.sum((model.W - prior.mean) ** 2))
    return nll(model, X, Y) + reg + prior.nu * float(np.sum(model.b ** 2))


def _check(model, X, Y) -> None:
    if X.shape[1] != model.W.shape[1] or Y.shape[1] != model.W.shape[0] or X.shape[0] != Y.shape[0]:
        raise ValueError(
            f"dimension mismatch: X {X.shape}, Y {Y.shape}, W {model.W.shape}"
        )


def _check_prior(model, prior) -> None:
    if prior.mean.shape != model.W.shape:
        raise ValueError("prior mean shape does not match W")


class _Objective:
    """Loss and gradient of either objective as plain array functions."""

    def __init__(self, X, Y, prior: PriorSpec | None, l2: float):
        self.X, self.Y = X, Y
        self.prior, self.l2 = prior, l2

    def reg(self, W, b, scale=1.0):
        if self.prior is None:
            loss = 0.5 * self.l2 * np.sum(W ** 2)
            return loss, self.l2 * W, np.zeros_like(b)
        p = self.prior
        D = W - p.mean
        loss = 0.5 * p.lam ** 2 * np.sum(D ** 2) + p.nu * np.sum(b ** 2)
        return loss, p.lam ** 2 * D, 2.0 * p.nu * b

    def data(self, W, b, rows=None, scale=1.0):
        X = self.X if rows is None else self.X[rows]
        Y = self.Y if rows is None else self.Y[rows]
        if X.shape[0] == 0:
            return 0.0, np.zeros_like(W), np.zeros_like(b)
        z = _logits(W, b, X)
        loss = np.sum(np.logaddexp(0.0, z) - Y * z)
        R = expit(z) - Y
        gW = np.asarray(X.T @ R).T
        gb = R.sum(axis=0)
        return scale * loss, scale * gW, scale * gb

    def full(self, W, b):
        l1, gW1, gb1 = self.data(W, b)
        l2, gW2, gb2 = self.reg(W, b)
        return float(l1 + l2), gW1 + gW2, gb1 + gb2


def grad(model: LogisticModel, X, Y, prior: PriorSpec | None = None, l2: float = 0.0):
    """Analytic gradient ``(dW, db)`` of the MAP loss if ``prior`` is given, else of the ML loss."""
    _check(model, X, Y)
    if prior is not None:
        _check_prior(model, prior)
    _, gW, gb = _Objective(X, _dense(Y), prior, l2).full(model.W, model.b)
    return gW, gb


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train(
    model: LogisticModel | None,
    X,
    Y,
    config: TrainConfig | None = None,
    prior: PriorSpec | None = None,
) -> LogisticModel:
    """Fit the model; returns a new :class:`LogisticModel`.

    Without an explicit ``model`` the start point is zeros (ML) or the prior
    mean with zero bias (MAP).
    """
    cfg = config or TrainConfig()
    if (cfg.mode == "MAP") != (prior is not None):
        raise ValueError("a prior is required in MAP mode and only there")
    n_t, n_s = Y.shape[1], X.shape[1]
    if model is None:
        model = LogisticModel(np.zeros((n_t, n_s)), np.zeros(n_t))
        if prior is not None:
            model.W = prior.mean.copy()
    model = model.copy()
    _check(model, X, Y)
    if prior is not None:
        _check_prior(model, prior)
    if sp.issparse(X):
        X = X.tocsr()
    obj = _Objective(X, _dense(Y), prior, cfg.l2)

    if cfg.optimizer == "newton":
        W, b = _newton(obj, model.W, model.b, cfg)
    elif cfg.optimizer == "lbfgs":
        W, b = _lbfgs(obj, model.W, model.b, cfg)
    else:
        W, b = _first_order(obj, model.W, model.b, cfg)
    _finite(obj, W, b)
    model.W, model.b = W, b
    return model


def _finite(obj, W, b, epoch=None) -> float:
    loss, _, _ = obj.full(W, b)
    if not math.isfinite(loss) or not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
        where = "" if epoch is None else f" at epoch {epoch}"
        raise NumericalError(
            f"non-finite objective{where}: loss={loss}, "
            f"max|W|={np.nanmax(np.abs(W)):.3g}, max|b|={np.nanmax(np.abs(b)):.3g}"
        )
    return loss


def _first_order(obj: _Objective, W, b, cfg: TrainConfig):
    """Minibatch gradient descent or Adam; batch gradients are rescaled to the full sample."""
    n = obj.X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    batch = min(cfg.batch_size, max(n, 1))
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    mW, vW = np.zeros_like(W), np.zeros_like(W)
    mb, vb = np.zeros_like(b), np.zeros_like(b)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if batch < n else None
        starts = range(0, n, batch) if n else [0]
        for start in starts:
            rows = None if order is None else np.sort(order[start:start + batch])
            m = n if rows is None else len(rows)
            _, gW, gb = obj.data(W, b, rows, scale=n / m if m else 1.0)
            _, rW, rb = obj.reg(W, b)
            gW, gb = gW + rW, gb + rb
            step += 1
            if cfg.optimizer == "gd":
                W = W - cfg.lr * gW
                b = b - cfg.lr * gb
                continue
            mW = beta1 * mW + (1 - beta1) * gW
            mb = beta1 * mb + (1 - beta1) * gb
            vW = beta2 * vW + (1 - beta2) * gW ** 2
            vb = beta2 * vb + (1 - beta2) * gb ** 2
            c1, c2 = 1 - beta1 ** step, 1 - beta2 ** step
            W = W - cfg.lr * (mW / c1) / (np.sqrt(vW / c2) + eps)
            b = b - cfg.lr * (mb / c1) / (np.sqrt(vb / c2) + eps)
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            _finite(obj, W, b, epoch)
    return W, b


def _lbfgs(obj: _Objective, W, b, cfg: TrainConfig):
    shape = W.shape

    def fun(theta):
        Wt = theta[: W.size].reshape(shape)
        bt = theta[W.size:]
        loss, gW, gb = obj.full(Wt, bt)
        return loss, np.concatenate([gW.ravel(), gb])

    res = scipy.optimize.minimize(
        fun, np.concatenate([W.ravel(), b]), jac=True, method="L-BFGS-B",
        options={"maxiter": max(cfg.max_iter, cfg.epochs) * 10, "gtol": cfg.tol, "ftol": 0.0},
    )
    return res.x[: W.size].reshape(shape), res.x[W.size:].copy()


def _newton(obj: _Objective, W, b, cfg: TrainConfig):
    """Damped Newton per target tag; targets are independent problems."""
    X = obj.X
    n, n_s = X.shape
    W, b = W.copy(), b.copy()
    ones = np.ones((n, 1))
    Xa = sp.hstack([X, ones]).tocsr() if sp.issparse(X) else np.hstack([np.asarray(X, float), ones])
    if obj.prior is None:
        reg_w, reg_b, mean = obj.l2, 0.0, np.zeros_like(W)
    else:
        reg_w, reg_b, mean = obj.prior.lam ** 2, 2.0 * obj.prior.nu, obj.prior.mean
    reg = np.full(n_s + 1, reg_w)
    reg[-1] = reg_b

    def f_t(theta, y, m):
        z = np.asarray(Xa @ theta).ravel() if n else np.zeros(0)
        dw = theta[:-1] - m
        return (np.sum(np.logaddexp(0.0, z) - y * z)
                + 0.5 * reg_w * dw @ dw + 0.5 * reg_b * theta[-1] ** 2), z

    for t in range(W.shape[0]):
        y = obj.Y[:, t]
        theta = np.append(W[t], b[t])
        m = mean[t]
        f, z = f_t(theta, y, m)
        for _ in range(cfg.max_iter):
            p = expit(z)
            g = np.asarray(Xa.T @ (p - y)).ravel() if n else np.zeros(n_s + 1)
            g[:-1] += reg_w * (theta[:-1] - m)
            g[-1] += reg_b * theta[-1]
            if np.max(np.abs(g)) <= cfg.tol:
                break
            d = p * (1 - p)
            if sp.issparse(Xa):
                H = (Xa.T @ Xa.multiply(d[:, None])).toarray()
            else:
                H = Xa.T @ (Xa * d[:, None])
            H[np.diag_indices_from(H)] += reg + 1e-12
            try:
                delta = np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                delta = np.linalg.lstsq(H, g, rcond=None)[0]
            slope = g @ delta
            step = 1.0
            while True:
                cand = theta - step * delta
                f_new, z_new = f_t(cand, y, m)
                if f_new <= f - 1e-4 * step * slope or step < 1e-10:
                    break
                step *= 0.5
            if f_new > f:
                break
            theta, f, z = cand, f_new, z_new
        W[t], b[t] = theta[:-1], theta[-1]
    return W, b


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def encode_annotation(annotation: Iterable[str], vocabulary: Sequence[str]) -> np.ndarray:
    index = {s: j for j, s in enumerate(vocabulary)}
    x = np.zeros(len(vocabulary))
    for tag in annotation:
        j = index.get(tag)
        if j is None:
            logger.warning("unknown source tag %r ignored", tag)
            continue
        x[j] = 1.0
    return x


def stat_score(model: LogisticModel, annotation: Iterable[str]) -> np.ndarray:
    return predict_proba(model, encode_annotation(annotation, model.sources))
