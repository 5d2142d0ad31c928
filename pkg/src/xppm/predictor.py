"""Predictor interface, reference predictors and evaluation.

Every predictor maps a batch of padded prefix matrices ``X`` of shape
``(N, M, n)`` plus the number of real rows per prefix to one real number
each: the KPI estimate for regression tasks, the probability of ``True``
for binary ones.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from . import metrics
from ._io import save_npz
from .encoding import Dataset, EncodedPrefix
from .errors import ConfigError, EncodingError, FingerprintMismatch

log = logging.getLogger(__name__)

REGRESSION = "regression"
BINARY = "binary"
MODEL_VERSION = 1


class Predictor:
    """Base class.  Subclasses implement ``_fit`` and ``_predict``."""

    name = "base"
    #: True when the output is an affine function of the flattened prefix.
    is_affine = False

    def __init__(self, task: str = REGRESSION):
        if task not in (REGRESSION, BINARY):
            raise ConfigError(f"unknown task {task!r}", field="task")
        self.task = task
        self.fingerprint: Optional[str] = None
        self.max_len: Optional[int] = None
        self.width: Optional[int] = None
        self.constant: Optional[float] = None

    @property
    def fitted(self) -> bool:
        return self.fingerprint is not None

    def hyperparameters(self) -> dict:
        return {}

    def fit(self, train: Dataset, validation: Optional[Dataset] = None, seed: int = 0) -> "Predictor":
        if len(train) == 0:
            raise ValueError("empty training set")
        if validation is not None and len(validation) and validation.fingerprint != train.fingerprint:
            raise FingerprintMismatch("training and validation items use different schemas")
        self.fingerprint = train.fingerprint
        self.max_len = train.max_len
        self.width = train.X.shape[2]
        y = train.y.astype(float)
        if np.all(y == y[0]):
            log.warning("all training targets equal %r; fitting a constant predictor", y[0])
            self.constant = float(y[0])
            return self
        self.constant = None
        self._fit(train, validation if validation is not None and len(validation) else None, seed)
        return self

    def predict_arrays(self, X: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        """Raw batch prediction without schema checks."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or X.shape[2] != self.width:
            raise EncodingError(f"expected (N, M, {self.width}) input, got {X.shape}")
        if self.constant is not None:
            return np.full(X.shape[0], self.constant)
        return self._predict(X, np.asarray(lengths, dtype=int))

    def predict(self, x: EncodedPrefix) -> float:
        return float(predict_batch(self, [x])[0])

    def _fit(self, train, validation, seed):
        raise NotImplementedError

    def _predict(self, X, lengths):
        raise NotImplementedError

    def _params(self) -> dict:
        return {}

    def _set_params(self, params: dict) -> None:
        pass


class MeanPredictor(Predictor):
    """Training mean (regression) or positive rate (binary)."""

    name = "mean"
    is_affine = True

    def _fit(self, train, validation, seed):
        self.mean_ = float(np.mean(train.y))

    def _predict(self, X, lengths):
        return np.full(X.shape[0], self.mean_)

    def _params(self):
        return {"mean": np.array(self.mean_)}

    def _set_params(self, params):
        self.mean_ = float(params["mean"])


class LinearPredictor(Predictor):
    """Least squares (regression) or L2-regularised logistic regression
    (binary) over the flattened padded prefix."""

    name = "linear"

    def __init__(self, task: str = REGRESSION, ridge: float = 0.0, l2: float = 1e-3, max_iter: int = 500):
        super().__init__(task)
        self.ridge = ridge
        self.l2 = l2
        self.max_iter = max_iter

    @property
    def is_affine(self):
        return self.task == REGRESSION

    def hyperparameters(self):
        return {"ridge": self.ridge, "l2": self.l2, "max_iter": self.max_iter}

    def _fit(self, train, validation, seed):
        Z = train.X.reshape(len(train), -1)
        y = train.y.astype(float)
        if self.task == REGRESSION:
            A = np.hstack([Z, np.ones((len(Z), 1))])
            if self.ridge > 0:
                reg = np.sqrt(self.ridge) * np.eye(A.shape[1])
                reg[-1, -1] = 0.0
                A = np.vstack([A, reg])
                y = np.r_[y, np.zeros(A.shape[1])]
            sol, *_ = np.linalg.lstsq(A, y, rcond=None)
            self.coef_flat_, self.intercept_ = sol[:-1], float(sol[-1])
            return
        d = Z.shape[1]

        def objective(w):
            z = Z @ w[:d] + w[d]
            p = expit(z)
            # log(1 + e^z) - y z, computed stably
            loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * self.l2 * np.dot(w[:d], w[:d])
            g = (p - y) / len(y)
            grad = np.r_[Z.T @ g + self.l2 * w[:d], g.sum()]
            return loss, grad

        res = minimize(objective, np.zeros(d + 1), jac=True, method="L-BFGS-B",
                       options={"maxiter": self.max_iter})
        self.coef_flat_, self.intercept_ = res.x[:d], float(res.x[d])

    @property
    def coef_(self) -> np.ndarray:
        return self.coef_flat_.reshape(self.max_len, self.width)

    def _predict(self, X, lengths):
        if X.shape[1] != self.max_len:
            raise EncodingError(f"linear predictor needs max length {self.max_len}, got {X.shape[1]}")
        # row-wise product and sum, so a row's output never depends on the batch it is in
        z = (X.reshape(X.shape[0], -1) * self.coef_flat_).sum(axis=1) + self.intercept_
        return expit(z) if self.task == BINARY else z

    def _params(self):
        return {"coef": self.coef_flat_, "intercept": np.array(self.intercept_)}

    def _set_params(self, params):
        self.coef_flat_ = params["coef"]
        self.intercept_ = float(params["intercept"])


class RecurrentPredictor(Predictor):
    """Single-layer tanh recurrent network with a linear (regression) or
    sigmoid (binary) head.

    Only the real rows of each prefix are fed to the cell, so padding never
    affects the output.  Trained with Adam on mean squared error or log
    loss; the epoch with the lowest validation loss is kept and training
    stops after ``patience`` epochs without improvement.
    """

    name = "recurrent"

    def __init__(
        self,
        task: str = REGRESSION,
        hidden: int = 16,
        learning_rate: float = 0.01,
        epochs: int = 60,
        patience: int = 6,
        batch_size: int = 64,
    ):
        super().__init__(task)
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.patience = patience
        self.batch_size = batch_size
        self.history_: list = []

    def hyperparameters(self):
        return {
            "hidden": self.hidden, "learning_rate": self.learning_rate, "epochs": self.epochs,
            "patience": self.patience, "batch_size": self.batch_size,
        }

    # targets are standardised for regression so the learning rate is scale-free
    def _init(self, n, rng):
        h = self.hidden
        return {
            "W": rng.normal(0.0, 1.0 / np.sqrt(n), (n, h)),
            "U": rng.normal(0.0, 1.0 / np.sqrt(h), (h, h)),
            "b": np.zeros(h),
            "v": rng.normal(0.0, 1.0 / np.sqrt(h), h),
            "c": np.zeros(1),
        }

    @staticmethod
    def _mask(X, lengths):
        M = X.shape[1]
        return np.arange(M)[None, :] >= (M - lengths)[:, None]

    def _forward(self, p, X, mask):
        N, M, _ = X.shape
        h = np.zeros((N, self.hidden))
        hs, tanhs = [h], []
        for t in range(M):
            # skip the matmul entirely for all-padding columns
            if not mask[:, t].any():
                hs.append(h)
                tanhs.append(None)
                continue
            a = np.tanh(X[:, t] @ p["W"] + h @ p["U"] + p["b"])
            h = np.where(mask[:, t, None], a, h)
            hs.append(h)
            tanhs.append(a)
        out = h @ p["v"] + p["c"][0]
        return out, hs, tanhs

    def _loss_grad(self, p, X, mask, y):
        out, hs, tanhs = self._forward(p, X, mask)
        N = len(y)
        if self.task == BINARY:
            loss = float(np.mean(np.logaddexp(0.0, out) - y * out))
            dout = (expit(out) - y) / N
        else:
            r = out - y
            loss = float(np.mean(r * r))
            dout = 2.0 * r / N
        g = {k: np.zeros_like(v) for k, v in p.items()}
        g["v"] = hs[-1].T @ dout
        g["c"] = np.array([dout.sum()])
        dh = np.outer(dout, p["v"])
        for t in range(X.shape[1] - 1, -1, -1):
            a = tanhs[t]
            if a is None:
                continue
            m = mask[:, t, None]
            da = np.where(m, dh * (1.0 - a * a), 0.0)
            g["W"] += X[:, t].T @ da
            g["U"] += hs[t].T @ da
            g["b"] += da.sum(axis=0)
            dh = np.where(m, da @ p["U"].T, dh)
        return loss, g

    def _fit(self, train, validation, seed):
        rng = np.random.default_rng(seed)
        y = train.y.astype(float)
        if self.task == REGRESSION:
            self.y_mean_ = float(y.mean())
            self.y_scale_ = float(y.std()) or 1.0
        else:
            self.y_mean_, self.y_scale_ = 0.0, 1.0
        yt = (y - self.y_mean_) / self.y_scale_
        X, mask = train.X, self._mask(train.X, train.lengths)
        if validation is not None:
            Xv, maskv = validation.X, self._mask(validation.X, validation.lengths)
            yv = (validation.y.astype(float) - self.y_mean_) / self.y_scale_
        else:
            Xv, maskv, yv = X, mask, yt

        p = self._init(X.shape[2], rng)
        m1 = {k: np.zeros_like(v) for k, v in p.items()}
        m2 = {k: np.zeros_like(v) for k, v in p.items()}
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        step = 0
        best = (np.inf, {k: v.copy() for k, v in p.items()})
        stale = 0
        self.history_ = []
        for epoch in range(self.epochs):
            order = rng.permutation(len(yt))
            for s in range(0, len(order), self.batch_size):
                idx = order[s:s + self.batch_size]
                _, g = self._loss_grad(p, X[idx], mask[idx], yt[idx])
                step += 1
                for k in p:
                    m1[k] = beta1 * m1[k] + (1 - beta1) * g[k]
                    m2[k] = beta2 * m2[k] + (1 - beta2) * g[k] ** 2
                    mhat = m1[k] / (1 - beta1 ** step)
                    vhat = m2[k] / (1 - beta2 ** step)
                    p[k] = p[k] - self.learning_rate * mhat / (np.sqrt(vhat) + eps)
            val_loss, _ = self._loss_grad(p, Xv, maskv, yv)
            self.history_.append(val_loss)
            if val_loss < best[0] - 1e-12:
                best = (val_loss, {k: v.copy() for k, v in p.items()})
                stale = 0
            else:
                stale += 1
                if stale >= self.patience:
                    break
        self.params_ = best[1]

    def _predict(self, X, lengths):
        out, _, _ = self._forward(self.params_, X, self._mask(X, lengths))
        if self.task == BINARY:
            return expit(out)
        return out * self.y_scale_ + self.y_mean_

    def _params(self):
        d = {f"p_{k}": v for k, v in self.params_.items()}
        d["y_mean"] = np.array(self.y_mean_)
        d["y_scale"] = np.array(self.y_scale_)
        return d

    def _set_params(self, params):
        self.params_ = {k[2:]: v for k, v in params.items() if k.startswith("p_")}
        self.y_mean_ = float(params["y_mean"])
        self.y_scale_ = float(params["y_scale"])


PREDICTORS = {cls.name: cls for cls in (MeanPredictor, LinearPredictor, RecurrentPredictor)}


def make_predictor(name: str, task: str, **hyper) -> Predictor:
    try:
        cls = PREDICTORS[name]
    except KeyError:
        raise ConfigError(f"unknown predictor {name!r}; choose from {sorted(PREDICTORS)}", field="predictor") from None
    return cls(task, **hyper)


def fit(predictor: Predictor, train: Dataset, validation: Optional[Dataset] = None, seed: int = 0) -> Predictor:
    return predictor.fit(train, validation, seed)


def predict_batch(predictor: Predictor, prefixes: Sequence[EncodedPrefix]) -> np.ndarray:
    if not predictor.fitted:
        raise ValueError("predictor is not fitted")
    if not prefixes:
        return np.zeros(0)
    for x in prefixes:
        if x.fingerprint != predictor.fingerprint:
            raise FingerprintMismatch("prefix was encoded with a different feature schema than the model")
    X = np.stack([x.matrix for x in prefixes])
    lengths = np.array([x.length for x in prefixes])
    return predictor.predict_arrays(X, lengths)


def predict_dataset(predictor: Predictor, data: Dataset) -> np.ndarray:
    if data.fingerprint != predictor.fingerprint:
        raise FingerprintMismatch("dataset was encoded with a different feature schema than the model")
    return predictor.predict_arrays(data.X, data.lengths)


@dataclass
class EvaluationReport:
    task: str
    n: int
    mae: Optional[float] = None
    f1: Optional[float] = None
    auroc: Optional[float] = None
    apr: Optional[float] = None
    positive_rate: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(predictor: Predictor, test: Dataset) -> EvaluationReport:
    if len(test) == 0:
        raise ValueError("empty test set")
    pred = predict_dataset(predictor, test)
    if predictor.task == REGRESSION:
        return EvaluationReport(REGRESSION, len(test), mae=metrics.mae(test.y, pred))
    y = test.y.astype(bool)
    return EvaluationReport(
        BINARY,
        len(test),
        f1=metrics.f1_score(y, pred),
        auroc=metrics.auroc(y, pred),
        apr=metrics.average_precision(y, pred),
        positive_rate=float(y.mean()),
    )


def save_model(predictor: Predictor, path) -> None:
    meta = {
        "version": MODEL_VERSION,
        "predictor": predictor.name,
        "task": predictor.task,
        "fingerprint": predictor.fingerprint,
        "max_len": predictor.max_len,
        "width": predictor.width,
        "constant": predictor.constant,
        "hyperparameters": predictor.hyperparameters(),
    }
    params = predictor._params() if predictor.constant is None else {}
    save_npz(path, {"meta": np.array(json.dumps(meta, sort_keys=True)), **params}, compress=False)


def load_model(path, fingerprint: Optional[str] = None) -> Predictor:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != MODEL_VERSION:
            raise FingerprintMismatch(f"{path}: unsupported model version {meta.get('version')}")
        if fingerprint is not None and meta["fingerprint"] != fingerprint:
            raise FingerprintMismatch(
                f"{path}: model schema fingerprint {meta['fingerprint'][:12]} != expected {fingerprint[:12]}"
            )
        predictor = make_predictor(meta["predictor"], meta["task"], **meta["hyperparameters"])
        predictor.fingerprint = meta["fingerprint"]
        predictor.max_len = meta["max_len"]
        predictor.width = meta["width"]
        predictor.constant = meta["constant"]
        if predictor.constant is None:
            predictor._set_params({k: z[k] for k in z.files if k != "meta"})
    return predictor
