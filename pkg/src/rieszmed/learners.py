"""Regression learners shared by every nuisance fit.

A learner minimizes one of two empirical losses over a function class:

* squared error            mean_i (f(x_i) - y_i)^2
* Riesz loss               mean_i f(x_i)^2 - 2 w_i f(s_i)

where ``s_i`` is a counterfactually modified copy of row ``x_i`` (same
feature layout, typically with the treatment coordinate replaced) and
``w_i`` is a fixed per-row multiplier produced by the previous link of a
representer chain.  Minimizing the Riesz loss recovers density-ratio
weights without ever estimating a density.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from threadpoolctl import ThreadpoolController

# Minibatch matrices here are tiny; BLAS threading only adds contention.
_BLAS = ThreadpoolController()


class TrainingDivergenceError(RuntimeError):
    """Gradient descent produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training loss became non-finite at epoch {epoch}: {loss}")
        self.epoch = epoch


@dataclass(frozen=True)
class RieszLoss:
    """Payload for the representer loss.

    ``shifted`` must have the same feature layout as the training matrix:
    the candidate is only ever evaluated at counterfactually modified
    copies of training rows, never at unseen feature dimensions.
    """

    shifted: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        shifted = np.ascontiguousarray(self.shifted, dtype=np.float64)
        weights = np.ascontiguousarray(self.weights, dtype=np.float64).reshape(-1)
        if shifted.shape[0] != weights.shape[0]:
            raise ValueError("shifted rows and weights must align")
        object.__setattr__(self, "shifted", shifted)
        object.__setattr__(self, "weights", weights)


@dataclass(frozen=True)
class LearnerSpec:
    """Learner kind plus hyperparameters.

    ``tabular_exact`` requires all-discrete features and returns the exact
    per-cell empirical minimizer; ``ridge`` is the exact penalized linear
    solution; ``mlp`` is a rectifier network trained by minibatch gradient
    descent; ``ensemble`` stacks {ridge, mlp} by held-out squared error and
    is available for squared-error fits only.
    """

    kind: str = "ridge"
    ridge_penalty: float = 1e-3
    hidden: tuple[int, ...] = (32, 32)
    epochs: int = 200
    batch_size: int = 256
    step_size: float = 1e-3
    clip_norm: float = 10.0
    seed: int = 0
    max_levels: int = 64

    def __post_init__(self):
        if self.kind not in ("ridge", "tabular_exact", "mlp", "ensemble"):
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.ridge_penalty < 0:
            raise ValueError("ridge_penalty must be >= 0")
        if self.kind in ("mlp", "ensemble"):
            if self.epochs < 1 or self.batch_size < 1 or self.step_size <= 0:
                raise ValueError("mlp hyperparameters out of range")
            if any(h < 1 for h in self.hidden):
                raise ValueError("hidden widths must be >= 1")
        object.__setattr__(self, "hidden", tuple(self.hidden))


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return x


class _Standardizer:
    def __init__(self, x: np.ndarray):
        self.mean = x.mean(axis=0)
        sd = x.std(axis=0)
        sd[sd == 0] = 1.0
        self.sd = sd

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.sd


class RidgePredictor:
    """Exact penalized least-squares (or Riesz) linear solution."""

    kind = "ridge"

    def __init__(self, coef, intercept, scaler, n_features, final_loss):
        self.coef = coef
        self.intercept = intercept
        self.scaler = scaler
        self.n_features = n_features
        self.final_loss = final_loss

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x)
        if x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[1]}")
        return self.scaler(x) @ self.coef + self.intercept


def _fit_ridge(spec: LearnerSpec, x: np.ndarray, loss, y) -> RidgePredictor:
    scaler = _Standardizer(x)
    xs = scaler(x)
    n, p = xs.shape
    lam = spec.ridge_penalty
    if isinstance(loss, RieszLoss):
        ss = scaler(loss.shifted)
        xa = np.column_stack([np.ones(n), xs])
        sa = np.column_stack([np.ones(n), ss])
        gram = xa.T @ xa / n
        pen = np.eye(p + 1) * lam
        pen[0, 0] = 0.0
        rhs = sa.T @ loss.weights / n
        gamma = np.linalg.solve(gram + pen, rhs)
        fitted = xa @ gamma
        final = float(np.mean(fitted**2) - 2.0 * np.mean(loss.weights * (sa @ gamma)))
        return RidgePredictor(gamma[1:], float(gamma[0]), scaler, p, final)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if lam == 0.0:
        xa = np.column_stack([np.ones(n), xs])
        gamma, *_ = np.linalg.lstsq(xa, y, rcond=None)
        coef, intercept = gamma[1:], float(gamma[0])
    else:
        yc = y - y.mean()
        gram = xs.T @ xs / n + lam * np.eye(p)
        coef = np.linalg.solve(gram, xs.T @ yc / n)
        intercept = float(y.mean())
    fitted = xs @ coef + intercept
    final = float(np.mean((fitted - y) ** 2))
    return RidgePredictor(coef, intercept, scaler, p, final)


_INT_CODEC_MAX = 4096


class _IntCodec:
    """Level codes via direct lookup for small nonnegative integer columns."""

    __slots__ = ("lookup", "levels")

    def __init__(self, cols):
        top = max(int(c.max()) for c in cols)
        present = np.zeros(top + 1, dtype=bool)
        for c in cols:
            present[c.astype(np.int64)] = True
        idx = np.flatnonzero(present)
        self.levels = idx.astype(np.float64)
        self.lookup = np.full(top + 1, -1, dtype=np.int64)
        self.lookup[idx] = np.arange(len(idx))

    def encode(self, col: np.ndarray) -> np.ndarray:
        ints = col.astype(np.int64)
        ok = (col == ints) & (ints >= 0) & (ints < len(self.lookup))
        codes = self.lookup[np.where(ok, ints, 0)]
        return np.where(ok, codes, -1)

    def encode_trusted(self, col: np.ndarray) -> np.ndarray:
        # training rows: every value is in the codec by construction
        return self.lookup[col.astype(np.int64)]


class _FloatCodec:
    """General discrete columns via sorted levels and binary search."""

    __slots__ = ("levels",)

    def __init__(self, cols):
        self.levels = np.unique(np.concatenate(cols)) if len(cols) > 1 else np.unique(cols[0])

    def encode(self, col: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.levels, col)
        pos_clip = np.minimum(pos, len(self.levels) - 1)
        ok = self.levels[pos_clip] == col
        return np.where(ok, pos_clip, -1)

    def encode_trusted(self, col: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.levels, col)


def _make_codec(cols):
    for c in cols:
        if not (np.all(c >= 0) and np.all(c <= _INT_CODEC_MAX) and np.all(c == np.floor(c))):
            return _FloatCodec(cols)
    return _IntCodec(cols)


class TabularPredictor:
    """Saturated model over discrete feature cells."""

    kind = "tabular_exact"

    def __init__(self, codecs, radices, values, cell_index, default, n_features, final_loss):
        self.codecs = codecs          # per-column level codecs
        self.radices = radices
        self.values = values          # value per occupied cell
        self.cell_index = cell_index  # raw cell id -> compact index, -1 if empty
        self.default = default
        self.n_features = n_features
        self.final_loss = final_loss

    def _encode(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (cell ids, valid mask); rows with unseen levels are invalid."""
        n = x.shape[0]
        ids = np.zeros(n, dtype=np.int64)
        valid = np.ones(n, dtype=bool)
        for j, codec in enumerate(self.codecs):
            codes = codec.encode(x[:, j])
            valid &= codes >= 0
            ids = ids * self.radices[j] + np.maximum(codes, 0)
        return ids, valid

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x)
        if x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[1]}")
        ids, valid = self._encode(x)
        out = np.full(x.shape[0], self.default, dtype=np.float64)
        known = valid & (self.cell_index[ids] >= 0)
        out[known] = self.values[self.cell_index[ids[known]]]
        return out


def _fit_tabular(spec: LearnerSpec, x: np.ndarray, loss, y) -> TabularPredictor:
    n, p = x.shape
    codecs = []
    for j in range(p):
        if isinstance(loss, RieszLoss):
            codec = _make_codec([x[:, j], loss.shifted[:, j]])
        else:
            codec = _make_codec([x[:, j]])
        if len(codec.levels) > spec.max_levels:
            raise ValueError(
                f"tabular_exact requires discrete features: column {j} has "
                f"{len(codec.levels)} distinct values (limit {spec.max_levels})"
            )
        codecs.append(codec)
    radices = np.array([len(c.levels) for c in codecs], dtype=np.int64)

    def encode(mat: np.ndarray) -> np.ndarray:
        ids = codecs[0].encode_trusted(mat[:, 0]) if p else np.zeros(len(mat), np.int64)
        for j in range(1, p):
            ids = ids * radices[j] + codecs[j].encode_trusted(mat[:, j])
        return ids

    n_cells_raw = int(np.prod(radices)) if p else 1
    ids = encode(x)
    counts = np.bincount(ids, minlength=n_cells_raw).astype(np.float64)
    if isinstance(loss, RieszLoss):
        sids = encode(loss.shifted)
        lin = np.bincount(sids, weights=loss.weights, minlength=n_cells_raw)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.where(counts > 0, lin / np.maximum(counts, 1.0), 0.0)
        default = 0.0
        fitted = vals[ids]
        final = float(np.mean(fitted**2) - 2.0 * np.mean(loss.weights * vals[sids]))
    else:
        yv = np.asarray(y, dtype=np.float64).reshape(-1)
        sums = np.bincount(ids, weights=yv, minlength=n_cells_raw)
        default = float(yv.mean())
        vals = np.where(counts > 0, sums / np.maximum(counts, 1.0), default)
        final = float(np.mean((vals[ids] - yv) ** 2))
    occupied = np.flatnonzero(counts > 0)
    cell_index = np.full(n_cells_raw, -1, dtype=np.int64)
    cell_index[occupied] = np.arange(len(occupied))
    return TabularPredictor(
        codecs=codecs,
        radices=radices,
        values=vals[occupied],
        cell_index=cell_index,
        default=default,
        n_features=p,
        final_loss=final,
    )


class MLPPredictor:
    """Rectifier network fitted by minibatch gradient descent."""

    kind = "mlp"

    def __init__(self, params, scaler, n_features, final_loss, loss_trace):
        self.params = params
        self.scaler = scaler
        self.n_features = n_features
        self.final_loss = final_loss
        self.loss_trace = loss_trace

    def _forward(self, xs: np.ndarray) -> np.ndarray:
        h = xs
        ws, bs = self.params
        for w, b in zip(ws[:-1], bs[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return (h @ ws[-1] + bs[-1]).reshape(-1)

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x)
        if x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[1]}")
        return self._forward(self.scaler(x))


def _mlp_init(rng, sizes):
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        ws.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return ws, bs


def _mlp_forward_full(params, xs):
    h = xs
    ws, bs = params
    for w, b in zip(ws[:-1], bs[:-1]):
        h = np.maximum(h @ w + b, 0.0)
    return (h @ ws[-1] + bs[-1]).reshape(-1)


def _mlp_batch_step(ws, bs, xb, make_dout, step, clip_norm):
    """Forward, compute dL/d(output) via ``make_dout``, backprop, update.

    Returns the batch loss reported by ``make_dout``.
    """
    acts = [xb]
    h = xb
    for w, b in zip(ws[:-1], bs[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    out = (h @ ws[-1] + bs[-1]).reshape(-1)
    batch_loss, dout = make_dout(out)
    grads_w, grads_b = [None] * len(ws), [None] * len(bs)
    delta = dout.reshape(-1, 1)
    for layer in range(len(ws) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ ws[layer].T) * (acts[layer] > 0.0)
    sq = sum(float(np.sum(g**2)) for g in grads_w) + sum(
        float(np.sum(g**2)) for g in grads_b
    )
    norm = np.sqrt(sq)
    scale = step if norm <= clip_norm else step * clip_norm / norm
    for layer in range(len(ws)):
        ws[layer] -= scale * grads_w[layer]
        bs[layer] -= scale * grads_b[layer]
    return batch_loss


def _fit_mlp(spec: LearnerSpec, x: np.ndarray, loss, y) -> MLPPredictor:
    with _BLAS.limit(limits=1):
        return _fit_mlp_inner(spec, x, loss, y)


def _fit_mlp_inner(spec: LearnerSpec, x: np.ndarray, loss, y) -> MLPPredictor:
    scaler = _Standardizer(x)
    xs = scaler(x)
    n, p = xs.shape
    riesz = isinstance(loss, RieszLoss)
    if riesz:
        ss = scaler(loss.shifted)
        wts = loss.weights
    else:
        yv = np.asarray(y, dtype=np.float64).reshape(-1)
    rng = np.random.default_rng(spec.seed)
    sizes = (p, *spec.hidden, 1)
    ws, bs = _mlp_init(rng, sizes)
    params = (ws, bs)
    batch = min(spec.batch_size, n)
    trace = []
    if riesz:
        stack_all = np.vstack([xs, ss])
    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            b = len(idx)
            if riesz:
                stacked = stack_all[np.concatenate([idx, idx + n])]
                wb = wts[idx]

                def make_dout(out, b=b, wb=wb):
                    fx, fs = out[:b], out[b:]
                    loss = float(np.mean(fx**2) - 2.0 * np.mean(wb * fs))
                    return loss, np.concatenate([2.0 * fx / b, -2.0 * wb / b])

                batch_loss = _mlp_batch_step(
                    ws, bs, stacked, make_dout, spec.step_size, spec.clip_norm
                )
            else:
                yb = yv[idx]

                def make_dout(out, b=b, yb=yb):
                    resid = out - yb
                    return float(np.mean(resid**2)), 2.0 * resid / b

                batch_loss = _mlp_batch_step(
                    ws, bs, xs[idx], make_dout, spec.step_size, spec.clip_norm
                )
            if not np.isfinite(batch_loss):
                raise TrainingDivergenceError(epoch, batch_loss)
            epoch_loss += batch_loss
            n_batches += 1
        trace.append(epoch_loss / n_batches)
    if riesz:
        fx = _mlp_forward_full(params, xs)
        fs = _mlp_forward_full(params, ss)
        final = float(np.mean(fx**2) - 2.0 * np.mean(wts * fs))
    else:
        final = float(np.mean((_mlp_forward_full(params, xs) - yv) ** 2))
    return MLPPredictor(params, scaler, p, final, trace)


class EnsemblePredictor:
    """Convex stack of base predictors."""

    kind = "ensemble"

    def __init__(self, members, weights, n_features, final_loss):
        self.members = members
        self.weights = weights
        self.n_features = n_features
        self.final_loss = final_loss

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x)
        if x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[1]}")
        out = np.zeros(x.shape[0])
        for wgt, member in zip(self.weights, self.members):
            if wgt != 0.0:
                out += wgt * member.predict(x)
        return out


def _fit_ensemble(spec: LearnerSpec, x: np.ndarray, y) -> EnsemblePredictor:
    yv = np.asarray(y, dtype=np.float64).reshape(-1)
    n = x.shape[0]
    rng = np.random.default_rng(spec.seed)
    holdout = max(2, n // 4)
    order = rng.permutation(n)
    val_idx, fit_idx = order[:holdout], order[holdout:]
    base_specs = [replace(spec, kind="ridge"), replace(spec, kind="mlp")]
    sub_preds = [fit(bs, x[fit_idx], "squared_error", yv[fit_idx]) for bs in base_specs]
    p0 = sub_preds[0].predict(x[val_idx])
    p1 = sub_preds[1].predict(x[val_idx])
    diff = p0 - p1
    denom = float(diff @ diff)
    w0 = 0.5 if denom == 0.0 else float(np.clip((yv[val_idx] - p1) @ diff / denom, 0.0, 1.0))
    members = [fit(bs, x, "squared_error", yv) for bs in base_specs]
    fitted = w0 * members[0].predict(x) + (1.0 - w0) * members[1].predict(x)
    final = float(np.mean((fitted - yv) ** 2))
    return EnsemblePredictor(members, (w0, 1.0 - w0), x.shape[1], final)


def fit(spec: LearnerSpec, x, loss="squared_error", y=None):
    """Fit one learner.  ``loss`` is ``"squared_error"`` or a RieszLoss."""
    x = _as_matrix(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("feature matrix contains non-finite values")
    riesz = isinstance(loss, RieszLoss)
    if not riesz and loss != "squared_error":
        raise ValueError(f"unknown loss {loss!r}")
    if riesz:
        if loss.shifted.shape != x.shape:
            raise ValueError("Riesz shifted rows must match the training matrix shape")
        if spec.kind == "ensemble":
            raise ValueError("ensemble learners support squared error only")
    elif y is None:
        raise ValueError("squared_error requires a target vector")
    if spec.kind == "ridge":
        return _fit_ridge(spec, x, loss, y)
    if spec.kind == "tabular_exact":
        return _fit_tabular(spec, x, loss, y)
    if spec.kind == "mlp":
        return _fit_mlp(spec, x, loss, y)
    return _fit_ensemble(spec, x, y)


def predict(predictor, x) -> np.ndarray:
    """Elementwise application of a fitted predictor."""
    return predictor.predict(x)


def save_loss_trace(predictor, path) -> None:
    """Dump a gradient-descent predictor's per-epoch training loss as CSV."""
    trace = getattr(predictor, "loss_trace", None)
    if trace is None:
        raise ValueError(f"{predictor.kind} predictors carry no loss trace")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for epoch, value in enumerate(trace):
            fh.write(f"{epoch},{value!r}\n")


class ClippedPredictor:
    """Wraps a predictor so outputs land in [lo, hi]."""

    def __init__(self, base, lo: float, hi: float):
        self.base = base
        self.lo = lo
        self.hi = hi
        self.kind = f"clipped[{base.kind}]"
        self.n_features = base.n_features

    def predict(self, x) -> np.ndarray:
        return np.clip(self.base.predict(x), self.lo, self.hi)
