"""LSTM probe forward/backward passes, Adam, and a finite-difference checker.

Parameter blocks are plain numpy arrays wrapped in :class:`ParamBlock`. The
recurrent cell packs its four gates column-wise in the order
``[input, forget, candidate, output]``:

    z = x @ W_x + h @ W_h + b            # (B, 4H)
    c' = f * c + i * g
    h' = o * tanh(c')

The probe projects the final hidden state: ``v_hat = h_last @ W_out + b_out``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericError, ShapeError, UsageError

CELL_NAMES = ("W_x", "W_h", "b")
PROBE_NAMES = ("W_x", "W_h", "b", "W_out", "b_out")


@dataclass
class ParamBlock:
    name: str
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ShapeError(f"{self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}")

    def zero_grad(self):
        self.grad[...] = 0.0


def zero_grads(params: dict[str, ParamBlock]) -> None:
    for p in params.values():
        p.zero_grad()


def sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_cell(params, d_in: int, hidden: int, where: str):
    W_x, W_h, b = (params[n].value for n in CELL_NAMES)
    if W_x.shape != (d_in, 4 * hidden):
        raise ShapeError(f"{where}: W_x has shape {W_x.shape}, expected {(d_in, 4 * hidden)}")
    if W_h.shape != (hidden, 4 * hidden):
        raise ShapeError(f"{where}: W_h has shape {W_h.shape}, expected {(hidden, 4 * hidden)}")
    if b.shape != (4 * hidden,):
        raise ShapeError(f"{where}: b has shape {b.shape}, expected {(4 * hidden,)}")


def recurrent_step(x, h, c_cell, params):
    """One LSTM step. Works on single vectors or on (B, .) batches.

    Inputs are not modified; returns ``(h_next, c_next)``.
    """
    x = np.asarray(x)
    h = np.asarray(h)
    c_cell = np.asarray(c_cell)
    W_x = params["W_x"].value
    hidden = params["W_h"].value.shape[0]
    if x.shape[-1] != W_x.shape[0]:
        raise ShapeError(f"x has width {x.shape[-1]}, expected d_L={W_x.shape[0]}")
    if h.shape[-1] != hidden:
        raise ShapeError(f"h has width {h.shape[-1]}, expected hidden={hidden}")
    if c_cell.shape != h.shape:
        raise ShapeError(f"c_cell has shape {c_cell.shape}, expected {h.shape} to match h")
    if x.shape[:-1] != h.shape[:-1]:
        raise ShapeError(f"x batch shape {x.shape[:-1]} does not match h batch shape {h.shape[:-1]}")
    _check_cell(params, x.shape[-1], hidden, "recurrent_step")

    z = x @ W_x + h @ params["W_h"].value + params["b"].value
    H = hidden
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c_next = f * c_cell + i * g
    h_next = o * np.tanh(c_next)
    return h_next, c_next


@dataclass
class ForwardCache:
    """Everything the backward pass needs from one batched forward pass."""

    lengths: np.ndarray
    xs: list = field(default_factory=list)
    h_prev: list = field(default_factory=list)
    c_prev: list = field(default_factory=list)
    gates: list = field(default_factory=list)  # (i, f, g, o, tanh_c) per step
    masks: list = field(default_factory=list)
    h_last: np.ndarray = None


def lstm_forward(X, lengths, params, keep_cache=True):
    """Run the cell over left-aligned padded sequences.

    X is (B, T, d_L); ``lengths[b]`` tokens of row b are real, the rest is
    padding. Returns the hidden state after each row's last real token.
    """
    X = np.asarray(X)
    lengths = np.asarray(lengths, dtype=np.int64)
    if X.ndim != 3:
        raise ShapeError(f"X must be (B, T, d_L), got shape {X.shape}")
    B, T, d_in = X.shape
    if lengths.shape != (B,):
        raise ShapeError(f"lengths has shape {lengths.shape}, expected ({B},)")
    if B and (lengths.min() < 1 or lengths.max() > T):
        raise UsageError(f"sequence lengths must lie in [1, {T}]")
    H = params["W_h"].value.shape[0]
    _check_cell(params, d_in, H, "lstm_forward")
    W_x, W_h, b = (params[n].value for n in CELL_NAMES)
    dtype = W_x.dtype

    h = np.zeros((B, H), dtype=dtype)
    c = np.zeros((B, H), dtype=dtype)
    cache = ForwardCache(lengths=lengths) if keep_cache else None
    # input projection for all steps at once
    XW = X.astype(dtype, copy=False) @ W_x + b
    for t in range(T):
        active = lengths > t
        if not active.any():
            break
        z = XW[:, t] + h @ W_h
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = active[:, None]
        if keep_cache:
            cache.xs.append(X[:, t].astype(dtype, copy=False))
            cache.h_prev.append(h)
            cache.c_prev.append(c)
            cache.gates.append((i, f, g, o, tc))
            cache.masks.append(m)
        h = np.where(m, h_new, h)
        c = np.where(m, c_new, c)
    if keep_cache:
        cache.h_last = h
    return h, cache


def lstm_backward(dh_last, cache, params):
    """Backpropagate through time; adds into the cell's grad fields.

    Returns the gradient with respect to the inputs X.
    """
    if cache is None or cache.h_last is None:
        raise UsageError("lstm_backward needs the cache from a forward pass run with keep_cache=True")
    W_h = params["W_h"].value
    gWx, gWh, gb = (params[n].grad for n in CELL_NAMES)
    dh = np.asarray(dh_last, dtype=W_h.dtype)
    dc = np.zeros_like(dh)
    dX = []
    for t in reversed(range(len(cache.xs))):
        i, f, g, o, tc = cache.gates[t]
        m = cache.masks[t]
        dh_a = np.where(m, dh, 0.0)
        dc_a = np.where(m, dc, 0.0)
        do = dh_a * tc
        dcn = dc_a + dh_a * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dcn * g * i * (1.0 - i),
                dcn * cache.c_prev[t] * f * (1.0 - f),
                dcn * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        gWx += cache.xs[t].T @ dz
        gWh += cache.h_prev[t].T @ dz
        gb += dz.sum(axis=0)
        dX.append(dz @ params["W_x"].value.T)
        dh = np.where(m, dz @ W_h.T, dh)
        dc = np.where(m, dcn * f, dc)
    dX.reverse()
    return np.stack(dX, axis=1) if dX else None


def probe_forward_batch(X, lengths, params, keep_cache=True):
    """Probe outputs for a padded batch: ``(v_hat, cache)``."""
    h, cache = lstm_forward(X, lengths, params, keep_cache=keep_cache)
    W_out = params["W_out"].value
    if W_out.shape[0] != h.shape[1]:
        raise ShapeError(f"W_out has {W_out.shape[0]} rows, expected hidden={h.shape[1]}")
    return h @ W_out + params["b_out"].value, cache


def probe_backward(dv_hat, cache, params):
    """Accumulate exact parameter gradients given dL/dv_hat for the batch.

    Gradients are summed over batch rows and timesteps and *added* to the
    existing grad fields; callers zero them at the start of a step.
    """
    if cache is None or cache.h_last is None:
        raise UsageError("probe_backward called without a cached forward pass")
    dv_hat = np.asarray(dv_hat)
    if not np.all(np.isfinite(dv_hat)):
        raise NumericError("non-finite upstream gradient passed to probe_backward")
    h = cache.h_last
    if dv_hat.shape != (h.shape[0], params["W_out"].value.shape[1]):
        raise ShapeError(f"upstream gradient has shape {dv_hat.shape}, expected {(h.shape[0], params['W_out'].value.shape[1])}")
    dv_hat = dv_hat.astype(h.dtype, copy=False)
    params["W_out"].grad += h.T @ dv_hat
    params["b_out"].grad += dv_hat.sum(axis=0)
    lstm_backward(dv_hat @ params["W_out"].value.T, cache, params)
    return params


@dataclass
class AdamState:
    lr: float = 5e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    u: dict = field(default_factory=dict)


def adam_step(params: dict[str, ParamBlock], state: AdamState) -> AdamState:
    """Bias-corrected Adam with coupled L2 decay (decay added to the gradient).

    Raises NumericError without touching anything if any gradient is non-finite.
    """
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in {name}; Adam step aborted")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(p.value)
            state.u[name] = np.zeros_like(p.value)
        g = p.grad + state.weight_decay * p.value if state.weight_decay else p.grad
        m, u = state.m[name], state.u[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        u *= state.beta2
        u += (1.0 - state.beta2) * (g * g)
        p.value -= state.lr * (m / bc1) / (np.sqrt(u / bc2) + state.eps)
    return state


@dataclass
class FDReport:
    max_rel_error: dict[str, float]
    flagged: dict[str, list[tuple]]
    tolerance: float

    @property
    def passed(self) -> bool:
        return not any(self.flagged.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def finite_diff_check(
    loss_fn: Callable[[dict], float],
    params: dict[str, ParamBlock],
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
) -> FDReport:
    """Compare each block's ``grad`` with central differences of ``loss_fn``.

    ``loss_fn(params)`` must return the scalar loss from the current values
    only. The analytic gradient is read from the grad fields as they stand.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    max_err, flagged = {}, {}
    for name, p in params.items():
        errs = np.zeros(p.value.shape)
        flat = p.value.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + epsilon
            lp = loss_fn(params)
            flat[j] = old - epsilon
            lm = loss_fn(params)
            flat[j] = old
            fd = (lp - lm) / (2.0 * epsilon)
            a = p.grad.reshape(-1)[j]
            errs.reshape(-1)[j] = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
        max_err[name] = float(errs.max()) if errs.size else 0.0
        flagged[name] = [tuple(int(i) for i in idx) for idx in np.argwhere(errs > tolerance)]
    return FDReport(max_err, flagged, tolerance)
