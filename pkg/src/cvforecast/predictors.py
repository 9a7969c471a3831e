"""Recurrent one-step-ahead predictors written directly in numpy.

Three cells share one training loop: LSTM, GRU and a simple (Elman) RNN,
each followed by a dense readout from the last hidden state to a scalar.
Parameters live in one flat float64 vector so that ADAM, serialisation and
finite-difference checks treat every architecture alike.

Two training layouts are supported:

* windowed (default): every sample is a window of ``lookback`` inputs that
  starts from a zero state; BPTT runs over the whole window and mini-batches
  are shuffled each epoch. With ``lookback == 1`` the network sees only the
  current observation.
* ``stateful=True`` (lookback 1 only): the training pairs are cut into
  ``batch_size`` contiguous streams; each mini-batch advances every stream
  by one step and the hidden state is carried to the next batch, with
  gradients truncated at the carried state. Inference then runs through the
  whole series from a zero state.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ContractError, TrainingError
from .flowparams import TimeSeries

log = logging.getLogger(__name__)

ARCHS = ("lstm", "gru", "simple")
GATES = {"lstm": ("i", "f", "o", "c"), "gru": ("z", "r", "n"), "simple": ("h",)}


def sigmoid(x):
    s = np.multiply(x, 0.5)
    np.tanh(s, out=s)
    s += 1.0
    s *= 0.5
    return s


# ---------------------------------------------------------------------------
# Parameter layout
# ---------------------------------------------------------------------------

class Weights:
    """Flat parameter vector with named views.

    ``W`` (gates*hidden,) input weights, ``U`` (hidden, gates*hidden)
    recurrent weights, ``b`` biases, ``wy`` (hidden,) readout weights and
    ``by`` (1,) readout bias. Gate blocks are laid out in :data:`GATES`
    order. Row-vector convention: pre-activations are ``x*W + h @ U + b``.
    """

    def __init__(self, arch, hidden, theta=None):
        if arch not in ARCHS:
            raise ContractError(f"unknown architecture {arch!r}")
        self.arch = arch
        self.hidden = hidden
        G = len(GATES[arch]) * hidden
        # U sits last so the input-only parameters form a contiguous prefix.
        self.shapes = [("W", (G,)), ("b", (G,)), ("wy", (hidden,)), ("by", (1,)), ("U", (hidden, G))]
        self.n_input_only = 2 * G + hidden + 1
        size = self.n_input_only + hidden * G
        if theta is None:
            theta = np.zeros(size)
        elif theta.shape != (size,):
            raise ContractError(f"expected {size} parameters, got {theta.shape}")
        self.theta = theta
        off = 0
        for name, shape in self.shapes:
            n = shape[0] * (shape[1] if len(shape) > 1 else 1)
            setattr(self, name, theta[off:off + n].reshape(shape))
            off += n

    @property
    def size(self):
        return len(self.theta)

    def zeros_like(self):
        return Weights(self.arch, self.hidden, np.zeros_like(self.theta))

    def copy(self):
        return Weights(self.arch, self.hidden, self.theta.copy())

    def gate(self, name):
        """(input weight (hidden,), recurrent weight (hidden, hidden), bias) of one gate."""
        k = GATES[self.arch].index(name)
        sl = slice(k * self.hidden, (k + 1) * self.hidden)
        return self.W[sl], self.U[:, sl], self.b[sl]

    @classmethod
    def init(cls, arch, hidden, rng):
        """Glorot-uniform weights per gate, zero biases, LSTM forget bias 1."""
        w = cls(arch, hidden)
        ng = len(GATES[arch])
        H = hidden
        lim_w = np.sqrt(6.0 / (1 + H))
        lim_u = np.sqrt(6.0 / (H + H))
        w.W[:] = rng.uniform(-lim_w, lim_w, size=ng * H)
        w.U[:] = rng.uniform(-lim_u, lim_u, size=(H, ng * H))
        w.wy[:] = rng.uniform(-lim_w, lim_w, size=H)
        if arch == "lstm":
            w.b[H:2 * H] = 1.0
        return w


# Alias matching the domain name used for LSTM parameters.
LstmWeights = Weights


@dataclass(frozen=True)
class CellState:
    h: np.ndarray
    c: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# Cells: batched forward step and backward step
# ---------------------------------------------------------------------------

def _lstm_step(x, h, c, w):
    H = w.hidden
    z = x[:, None] * w.W
    z += w.b
    if h is not None:
        z += h @ w.U
    s = sigmoid(z[:, :3 * H])
    i, f, o = s[:, :H], s[:, H:2 * H], s[:, 2 * H:]
    g = np.tanh(z[:, 3 * H:])
    c_new = i * g if c is None else f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (x, h, c, i, f, o, g, tc)


def _lstm_back(cache, dh, dc, w, grad, need_prev):
    x, h, c, i, f, o, g, tc = cache
    dct = dh * o * (1.0 - tc * tc)
    if dc is not None:
        dct += dc
    dz = np.concatenate(
        [
            dct * g * i * (1.0 - i),
            np.zeros_like(dct) if c is None else dct * c * f * (1.0 - f),
            dh * tc * o * (1.0 - o),
            dct * i * (1.0 - g * g),
        ],
        axis=1,
    )
    grad.W += x @ dz
    if h is not None:
        grad.U += h.T @ dz
    grad.b += dz.sum(axis=0)
    if not need_prev:
        return None, None
    return dz @ w.U.T, dct * f


def _gru_step(x, h, c, w):
    H = w.hidden
    a = x[:, None] * w.W + w.b
    if h is None:
        zr = sigmoid(a[:, :2 * H])
        z, r = zr[:, :H], zr[:, H:]
        n = np.tanh(a[:, 2 * H:])
        return (1.0 - z) * n, None, (x, h, z, r, None, n)
    zr = sigmoid(a[:, :2 * H] + h @ w.U[:, :2 * H])
    z, r = zr[:, :H], zr[:, H:]
    rh = r * h
    n = np.tanh(a[:, 2 * H:] + rh @ w.U[:, 2 * H:])
    h_new = (1.0 - z) * n + z * h
    return h_new, None, (x, h, z, r, rh, n)


def _gru_back(cache, dh, dc, w, grad, need_prev):
    x, h, z, r, rh, n = cache
    H = w.hidden
    dn = dh * (1.0 - z) * (1.0 - n * n)
    if h is None:
        dzr = np.concatenate([-dh * n * z * (1.0 - z), np.zeros_like(dn)], axis=1)
    else:
        drh = dn @ w.U[:, 2 * H:].T
        dzr = np.concatenate([dh * (h - n) * z * (1.0 - z), drh * h * r * (1.0 - r)], axis=1)
        grad.U[:, :2 * H] += h.T @ dzr
        grad.U[:, 2 * H:] += rh.T @ dn
    grad.W[:2 * H] += x @ dzr
    grad.W[2 * H:] += x @ dn
    grad.b[:2 * H] += dzr.sum(axis=0)
    grad.b[2 * H:] += dn.sum(axis=0)
    if not need_prev:
        return None, None
    return dh * z + drh * r + dzr @ w.U[:, :2 * H].T, None


def _simple_step(x, h, c, w):
    a = x[:, None] * w.W + w.b
    if h is not None:
        a += h @ w.U
    h_new = np.tanh(a)
    return h_new, None, (x, h, h_new)


def _simple_back(cache, dh, dc, w, grad, need_prev):
    x, h, h_new = cache
    da = dh * (1.0 - h_new * h_new)
    grad.W += x @ da
    if h is not None:
        grad.U += h.T @ da
    grad.b += da.sum(axis=0)
    if not need_prev:
        return None, None
    return da @ w.U.T, None


_CELLS = {
    "lstm": (_lstm_step, _lstm_back),
    "gru": (_gru_step, _gru_back),
    "simple": (_simple_step, _simple_back),
}


def lstm_cell_forward(x: float, prev: CellState, w: Weights) -> CellState:
    """One LSTM step for a single scalar input."""
    if not np.isfinite(x):
        raise ContractError("input must be finite")
    h = np.asarray(prev.h, dtype=np.float64).reshape(1, -1)
    c = np.asarray(prev.c, dtype=np.float64).reshape(1, -1)
    h_new, c_new, _ = _lstm_step(np.array([float(x)]), h, c, w)
    return CellState(h=h_new[0], c=c_new[0])


def cell_step(arch, x, state: CellState, w: Weights) -> CellState:
    step = _CELLS[arch][0]
    h = np.atleast_2d(state.h)
    c = np.atleast_2d(state.c) if state.c is not None else None
    h_new, c_new, _ = step(np.atleast_1d(np.asarray(x, dtype=np.float64)), h, c, w)
    return CellState(h_new, c_new)


def zero_state(arch, batch, hidden, dtype=np.float64):
    h = np.zeros((batch, hidden), dtype=dtype)
    return h, (np.zeros((batch, hidden), dtype=dtype) if arch == "lstm" else None)


def forward_window(w: Weights, X, h=None, c=None, keep_cache=False):
    """Run windows ``X`` (batch, steps) from state ``(h, c)``; return last h, c, caches.

    ``h=None`` is the zero state (the first step then skips the recurrent term).
    """
    step = _CELLS[w.arch][0]
    caches = []
    for t in range(X.shape[1]):
        h, c, cache = step(X[:, t], h, c, w)
        if keep_cache:
            caches.append(cache)
    return h, c, caches


def backward_window(w: Weights, caches, dh_last, grad: Weights):
    """BPTT from the gradient w.r.t. the last hidden state; truncated at the window start."""
    back = _CELLS[w.arch][1]
    dh, dc = dh_last, None
    for t in range(len(caches) - 1, -1, -1):
        dh, dc = back(caches[t], dh, dc, w, grad, need_prev=t > 0)


def loss_and_grad(w: Weights, X, y, h0=None, c0=None, mask=None, grad=None):
    """MSE loss of the readout on windows ``X`` against ``y`` and its gradient.

    ``mask`` is an optional (batch, hidden) inverted-dropout mask applied to
    the last hidden state before the readout. Returns (loss, grad, outputs,
    (h_last, c_last)). A ``grad`` buffer may be passed in to be overwritten.
    """
    h, c, caches = forward_window(w, X, h0, c0, keep_cache=True)
    hd = h * mask if mask is not None else h
    yhat = hd @ w.wy + w.by[0]
    err = yhat - y
    B = len(y)
    loss = float(err @ err) / B
    if grad is None:
        grad = w.zeros_like()
    else:
        grad.theta.fill(0.0)
    dy = (2.0 / B) * err
    grad.wy[:] = hd.T @ dy
    grad.by[0] = dy.sum()
    dh = np.outer(dy, w.wy)
    if mask is not None:
        dh *= mask
    backward_window(w, caches, dh, grad)
    return loss, grad, yhat, (h, c)


# ---------------------------------------------------------------------------
# Hyperparameters, model, data preparation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Hyperparams:
    epochs: int = 400
    neurons: int = 100
    batch_size: int = 50
    dropout_rate: float = 0.2
    learning_rate: float = 0.001
    lookback: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    rng_seed: int = 0
    stateful: bool = False
    precision: str = "float32"

    def __post_init__(self):
        for name in ("epochs", "neurons", "batch_size", "lookback"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ContractError("dropout_rate must lie in [0, 1)")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")
        if self.stateful and self.lookback != 1:
            raise ContractError("stateful training requires lookback 1")
        if self.precision not in ("float32", "float64"):
            raise ContractError("precision must be float32 or float64")


@dataclass(frozen=True)
class Normalization:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ContractError("normalization requires min < max")

    @classmethod
    def fit(cls, values):
        v = np.asarray(values, dtype=np.float64)
        lo, hi = float(v.min()), float(v.max())
        if lo == hi:
            # Constant training data: centre it in a unit-wide range.
            lo, hi = lo - 0.5, hi + 0.5
        return cls(lo, hi)

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.lo) / (self.hi - self.lo)

    def invert(self, x):
        return np.asarray(x, dtype=np.float64) * (self.hi - self.lo) + self.lo


@dataclass
class SupervisedData:
    """Normalised supervised pairs.

    ``series`` is the full normalised series. Windows end at input index
    ``t`` and predict ``series[t + 1]``; ``train_idx``/``test_idx`` hold the
    input end indices of each split.
    """

    series: np.ndarray
    lookback: int
    train_idx: np.ndarray
    test_idx: np.ndarray
    normalization: Normalization

    def windows(self, idx):
        L = self.lookback
        X = np.lib.stride_tricks.sliding_window_view(self.series, L)[idx - L + 1]
        return X, self.series[idx + 1]

    @property
    def train(self):
        return self.windows(self.train_idx)

    @property
    def test(self):
        return self.windows(self.test_idx)


def prepare_supervised(series, lookback: int = 1, split=(7000, 2800)) -> SupervisedData:
    """Chronological split with min-max scaling fit on the training portion only.

    Training targets are ``x[lookback] .. x[train_n - 1]`` and test targets
    are ``x[train_n] .. x[train_n + test_n - 1]``; test inputs may reach
    back into the training portion.
    """
    x = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=np.float64)
    train_n, test_n = split
    if lookback < 1:
        raise ContractError("lookback must be >= 1")
    if train_n <= lookback or test_n < 0 or train_n + test_n > len(x):
        raise ContractError(f"series of length {len(x)} cannot hold split {split} with lookback {lookback}")
    norm = Normalization.fit(x[:train_n])
    s = norm.apply(x[: train_n + test_n])
    train_idx = np.arange(lookback - 1, train_n - 1)
    test_idx = np.arange(train_n - 1, train_n + test_n - 1)
    return SupervisedData(s, lookback, train_idx, test_idx, norm)


@dataclass
class RnnModel:
    arch: str
    weights: Weights
    hyperparams: Hyperparams
    normalization: Normalization
    history: list = field(default_factory=list)  # per-epoch training MAE (normalised)

    @property
    def hidden(self):
        return self.weights.hidden

    @property
    def stateful(self):
        return self.hyperparams.stateful

    def predictor(self) -> "StreamPredictor":
        return StreamPredictor(self)


# ---------------------------------------------------------------------------
# ADAM and training
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, size, lr, beta1, beta2, eps, dtype=np.float64):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self.t = 0
        self._tmp = np.zeros(size, dtype=dtype)

    def update(self, theta, g):
        self.t += 1
        b1, b2 = self.b1, self.b2
        self.m *= b1
        self.m += (1.0 - b1) * g
        self.v *= b2
        np.multiply(g, g, out=self._tmp)
        self._tmp *= 1.0 - b2
        self.v += self._tmp
        mhat_scale = 1.0 / (1.0 - b1 ** self.t)
        vhat_scale = 1.0 / (1.0 - b2 ** self.t)
        np.multiply(self.v, vhat_scale, out=self._tmp)
        np.sqrt(self._tmp, out=self._tmp)
        self._tmp += self.eps
        np.divide(self.m, self._tmp, out=self._tmp)
        self._tmp *= self.lr * mhat_scale
        theta -= self._tmp


def _dropout_mask(rng, shape, rate, dtype=np.float64):
    if rate == 0:
        return None
    keep = rng.random(shape, dtype=np.float32) >= rate
    return keep * np.asarray(1.0 / (1.0 - rate), dtype=dtype)


def train_rnn(train, arch: str = "lstm", hyper: Hyperparams = Hyperparams(), normalization=None) -> RnnModel:
    """Fit a recurrent predictor by mini-batch ADAM on the MSE loss.

    ``train`` is a :class:`SupervisedData` (its training split is used) or an
    ``(X, y)`` pair of normalised windows. In stateful mode the pairs must
    be chronological.

    Arithmetic runs in ``hyper.precision``; the returned weights are float64.
    """
    if isinstance(train, SupervisedData):
        X, y = train.train
        normalization = train.normalization
    else:
        X, y = train
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
    if len(y) == 0:
        raise ContractError("no training pairs")
    if X.shape[1] != hyper.lookback:
        raise ContractError(f"windows have {X.shape[1]} steps, lookback is {hyper.lookback}")
    if normalization is None:
        normalization = Normalization(0.0, 1.0)
    dtype = np.dtype(hyper.precision)
    X = X.astype(dtype)
    y = y.astype(dtype)
    rng = np.random.default_rng(hyper.rng_seed)
    w = Weights.init(arch, hyper.neurons, rng)
    w = Weights(arch, hyper.neurons, w.theta.astype(dtype))
    grad = w.zeros_like()
    # Windows of one step start from the zero state, so U never receives a
    # gradient and its ADAM update is exactly zero; optimise the prefix only.
    n_opt = w.n_input_only if (hyper.lookback == 1 and not hyper.stateful) else w.size
    theta_opt, grad_opt = w.theta[:n_opt], grad.theta[:n_opt]
    opt = Adam(n_opt, hyper.learning_rate, hyper.adam_beta1, hyper.adam_beta2, hyper.adam_eps, dtype)
    H = hyper.neurons
    history = []

    if hyper.stateful:
        B = min(hyper.batch_size, len(y))
        steps = len(y) // B
        skip = len(y) - steps * B
        # Stream j covers pairs skip + j*steps .. skip + (j+1)*steps - 1.
        starts = skip + np.arange(B) * steps
        x_seq = X[:, 0]
        for epoch in range(hyper.epochs):
            h, c = zero_state(arch, B, H, dtype)
            abs_err = loss_sum = 0.0
            for k in range(steps):
                idx = starts + k
                mask = _dropout_mask(rng, (B, H), hyper.dropout_rate, dtype)
                loss, _, yhat, (h, c) = loss_and_grad(w, x_seq[idx, None], y[idx], h, c, mask, grad)
                opt.update(theta_opt, grad_opt)
                abs_err += float(np.abs(yhat - y[idx]).sum())
                loss_sum += loss
            mae = abs_err / (steps * B)
            _check_epoch(mae, loss_sum, epoch)
            history.append(mae)
    else:
        n = len(y)
        B = min(hyper.batch_size, n)
        for epoch in range(hyper.epochs):
            order = rng.permutation(n)
            abs_err = loss_sum = 0.0
            for s in range(0, n, B):
                idx = order[s:s + B]
                mask = _dropout_mask(rng, (len(idx), H), hyper.dropout_rate, dtype)
                loss, _, yhat, _ = loss_and_grad(w, X[idx], y[idx], mask=mask, grad=grad)
                opt.update(theta_opt, grad_opt)
                abs_err += float(np.abs(yhat - y[idx]).sum())
                loss_sum += loss
            mae = abs_err / n
            _check_epoch(mae, loss_sum, epoch)
            history.append(mae)
        log.debug("trained %s windowed, final MAE %.5f", arch, history[-1])

    w = Weights(arch, hyper.neurons, w.theta.astype(np.float64))
    return RnnModel(arch=arch, weights=w, hyperparams=hyper, normalization=normalization, history=history)


def _check_epoch(mae, loss_sum, epoch):
    if not (np.isfinite(mae) and np.isfinite(loss_sum)):
        raise TrainingError(f"loss became non-finite in epoch {epoch}", epoch=epoch)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def predict_normalized(model: RnnModel, s: np.ndarray) -> np.ndarray:
    """One-step predictions on a normalised series; entry k predicts s[k + lookback]."""
    w = model.weights
    L = model.hyperparams.lookback
    if len(s) <= L:
        raise ContractError("series must be longer than the lookback")
    if model.stateful:
        step = _CELLS[model.arch][0]
        h, c = zero_state(model.arch, 1, w.hidden)
        out = np.empty(len(s) - 1)
        buf = np.empty(1)
        for t in range(len(s) - 1):
            buf[0] = s[t]
            h, c, _ = step(buf, h, c, w)
            out[t] = h[0] @ w.wy + w.by[0]
        return out
    X = np.lib.stride_tricks.sliding_window_view(s[:-1], L)
    out = np.empty(len(X))
    for a in range(0, len(X), 4096):
        h, _, _ = forward_window(w, X[a:a + 4096])
        out[a:a + 4096] = h @ w.wy + w.by[0]
    return out


def predict_series(model: RnnModel, series):
    """Teacher-forced one-step-ahead predictions, denormalised.

    Each prediction conditions on observed history only. Output element k
    forecasts input element ``k + lookback``; the result has
    ``len(series) - lookback`` entries.
    """
    x = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ContractError("series must be finite")
    s = model.normalization.apply(x)
    out = model.normalization.invert(predict_normalized(model, s))
    if isinstance(series, TimeSeries):
        return series.slice(model.hyperparams.lookback).with_values(out)
    return out


class StreamPredictor:
    """Step-by-step inference: feed one observation, get the next-step forecast."""

    def __init__(self, model: RnnModel):
        self.model = model
        self._step = _CELLS[model.arch][0]
        self._h, self._c = zero_state(model.arch, 1, model.hidden)
        self._window = []
        self._buf = np.empty(1)

    def step(self, value) -> Optional[float]:
        m = self.model
        w = m.weights
        s = (float(value) - m.normalization.lo) / (m.normalization.hi - m.normalization.lo)
        if m.stateful:
            self._buf[0] = s
            self._h, self._c, _ = self._step(self._buf, self._h, self._c, w)
            y = self._h[0] @ w.wy + w.by[0]
        else:
            self._window.append(s)
            L = m.hyperparams.lookback
            if len(self._window) < L:
                return None
            del self._window[:-L]
            h, _, _ = forward_window(w, np.array([self._window]))
            y = h[0] @ w.wy + w.by[0]
        return float(m.normalization.invert(y))


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def gradient_check(arch: str, weights: Weights, batch, eps: float = 1e-5) -> float:
    """Max relative error between the BPTT gradient and central differences.

    ``batch`` is ``(X, y)`` with ``X`` of shape (batch, steps). No dropout.
    """
    X, y = (np.asarray(a, dtype=np.float64) for a in batch)
    if weights.arch != arch:
        raise ContractError("weights architecture mismatch")
    _, g, _, _ = loss_and_grad(weights, X, y)
    w = weights.copy()
    fd = np.empty(w.size)
    for k in range(w.size):
        orig = w.theta[k]
        w.theta[k] = orig + eps
        lp = loss_and_grad(w, X, y)[0]
        w.theta[k] = orig - eps
        lm = loss_and_grad(w, X, y)[0]
        w.theta[k] = orig
        fd[k] = (lp - lm) / (2 * eps)
    ga = g.theta
    denom = np.maximum(np.maximum(np.abs(ga), np.abs(fd)), 1e-8)
    return float(np.max(np.abs(ga - fd) / denom))


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

MAGIC = b"CVFRNN\x00\x01"


def save_model(model: RnnModel, path) -> None:
    """Write the model file: magic, header length, JSON header, little-endian f64 weights."""
    header = {
        "arch": model.arch,
        "hidden": model.hidden,
        "hyperparams": asdict(model.hyperparams),
        "normalization": [model.normalization.lo, model.normalization.hi],
        "arrays": [[name, list(shape)] for name, shape in model.weights.shapes],
        "history": list(model.history),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(model.weights.theta.astype("<f8").tobytes())


def load_model(path) -> RnnModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise ContractError(f"{path}: not a model file")
    off = len(MAGIC)
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    header = json.loads(data[off:off + n].decode("utf-8"))
    off += n
    theta = np.frombuffer(data[off:], dtype="<f8").astype(np.float64)
    w = Weights(header["arch"], header["hidden"], theta)
    if [[k, list(s)] for k, s in w.shapes] != header["arrays"]:
        raise ContractError(f"{path}: array layout does not match architecture")
    lo, hi = header["normalization"]
    return RnnModel(
        arch=header["arch"],
        weights=w,
        hyperparams=Hyperparams(**header["hyperparams"]),
        normalization=Normalization(lo, hi),
        history=header.get("history", []),
    )
