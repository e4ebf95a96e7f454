"""Reverse-mode gradient propagation for the tensor kernels.

A :class:`Tape` records each differentiable operation as it executes; calling
``backward`` replays the records in exact reverse order, accumulating
gradients into :class:`Parameter` objects that were watched on that tape.
Every op mirrors a kernel in :mod:`irnet.tensor_core` and takes the tape as
its first argument; pass ``tape=None`` to run the identical forward math with
no recording (inference mode).
"""
from __future__ import annotations

import numpy as np

from . import tensor_core as core
from .errors import ConfigError, NumericsError, ShapeError, TapeError
from .tensor_core import ConvWeights, DTYPE


class Parameter:
    """A named trainable tensor with an additively accumulated gradient."""

    def __init__(self, value: np.ndarray, name: str):
        self.value = np.ascontiguousarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.name = name

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.value.shape})"


class Var:
    """A node in one forward pass: a value plus its (lazily created) gradient."""

    __slots__ = ("value", "grad", "needs_grad")

    def __init__(self, value, needs_grad=False):
        self.value = value
        self.grad = None
        self.needs_grad = needs_grad

    def add_grad(self, g):
        if self.grad is None:
            # copy: g may alias a slice of another node's gradient
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g


class Tape:
    """Ordered record of executed ops, replayable backward exactly once."""

    def __init__(self):
        self._nodes = []
        self._watched = []
        self._result = None
        self._consumed = False
        # sign patterns at non-smooth ops, used to detect kink crossings
        self.kink_signs: list[np.ndarray] = []

    def watch(self, p: Parameter) -> Var:
        v = Var(p.value, needs_grad=True)
        self._watched.append((v, p))
        return v

    def record(self, out: Var, backward_fn):
        self._nodes.append(backward_fn)
        self._result = out

    def backward(self, loss_grad=1.0):
        backward(self, loss_grad)


def backward(tape: Tape, loss_grad) -> None:
    """Seed the tape's final output with ``loss_grad`` and propagate.

    Each watched Parameter has its ``grad`` incremented by d(loss)/d(param).
    A tape can be replayed only once.
    """
    if tape._consumed:
        raise TapeError("backward called on an already consumed tape")
    if not tape._nodes:
        raise TapeError("backward called on an empty tape")
    tape._consumed = True
    out = tape._result
    if np.isscalar(out.value) or getattr(out.value, "ndim", 1) == 0:
        seed = np.asarray(loss_grad, dtype=DTYPE)
        if seed.ndim != 0 and seed.size != 1:
            raise ShapeError(f"loss_grad must be scalar for a scalar output, "
                             f"got shape {seed.shape}")
        out.grad = DTYPE(seed)
    else:
        seed = np.asarray(loss_grad, dtype=DTYPE)
        if seed.shape != out.value.shape:
            raise ShapeError(f"loss_grad shape {seed.shape} does not match "
                             f"output shape {out.value.shape}")
        out.grad = seed.copy()
    for fn in reversed(tape._nodes):
        fn()
    for var, param in tape._watched:
        if var.grad is not None:
            param.grad += var.grad


def _out(tape, inputs, value):
    needs = tape is not None and any(v.needs_grad for v in inputs)
    return Var(value, needs_grad=needs)


# ---------------------------------------------------------------------------
# differentiable ops (forward math delegated to tensor_core)
# ---------------------------------------------------------------------------

def constant(arr) -> Var:
    """Wrap an array that requires no gradient."""
    return Var(np.ascontiguousarray(arr, dtype=DTYPE), needs_grad=False)


def conv2d(tape, x: Var, kernel: Var, bias: Var, padding=None) -> Var:
    w = ConvWeights(kernel.value, bias.value)
    out = _out(tape, (x, kernel, bias), core.conv2d(x.value, w, padding))
    if out.needs_grad:
        k = w.ksize
        pad = k // 2 if padding is None else padding
        x_val, k_val = x.value, kernel.value

        def _back():
            g = out.grad
            if bias.needs_grad:
                bias.add_grad(g.sum(axis=(0, 2, 3), dtype=np.float64).astype(DTYPE))
            if kernel.needs_grad:
                kernel.add_grad(core.conv2d_kernel_grad(x_val, g, k, pad))
            if x.needs_grad:
                x.add_grad(core.conv2d_input_grad(g, k_val, pad))

        tape.record(out, _back)
    return out


def leaky_relu(tape, x: Var, slope: float) -> Var:
    out = _out(tape, (x,), core.leaky_relu(x.value, slope))
    if tape is not None:
        # subgradient at exactly 0 takes the negative-side slope
        mask = x.value > 0
        tape.kink_signs.append(mask)
        if out.needs_grad:
            def _back():
                x.add_grad(np.where(mask, out.grad, DTYPE(slope) * out.grad))

            tape.record(out, _back)
    return out


def relu(tape, x: Var) -> Var:
    out = _out(tape, (x,), core.relu(x.value))
    if tape is not None:
        mask = x.value > 0
        tape.kink_signs.append(mask)
        if out.needs_grad:
            def _back():
                x.add_grad(np.where(mask, out.grad, DTYPE(0)))

            tape.record(out, _back)
    return out


def sigmoid(tape, x: Var) -> Var:
    out = _out(tape, (x,), core.sigmoid(x.value))
    if out.needs_grad:
        s = out.value

        def _back():
            x.add_grad(out.grad * s * (1.0 - s))

        tape.record(out, _back)
    return out


def add(tape, x: Var, y: Var) -> Var:
    out = _out(tape, (x, y), core.add(x.value, y.value))
    if out.needs_grad:
        def _back():
            if x.needs_grad:
                x.add_grad(out.grad)
            if y.needs_grad:
                y.add_grad(out.grad)

        tape.record(out, _back)
    return out


def scale_channels(tape, x: Var, a: Var) -> Var:
    out = _out(tape, (x, a), core.scale_channels(x.value, a.value))
    if out.needs_grad:
        x_val, a_val = x.value, a.value

        def _back():
            g = out.grad
            if x.needs_grad:
                x.add_grad(g * a_val)
            if a.needs_grad:
                a.add_grad((g * x_val).sum(axis=(2, 3), keepdims=True,
                                           dtype=np.float64).astype(DTYPE))

        tape.record(out, _back)
    return out


def concat_channels(tape, parts) -> Var:
    parts = list(parts)
    out = _out(tape, parts, core.concat_channels([p.value for p in parts]))
    if out.needs_grad:
        widths = [p.value.shape[1] for p in parts]

        def _back():
            lo = 0
            for p, w in zip(parts, widths):
                if p.needs_grad:
                    p.add_grad(out.grad[:, lo:lo + w])
                lo += w

        tape.record(out, _back)
    return out


def pixel_shuffle(tape, x: Var, s: int) -> Var:
    out = _out(tape, (x,), core.pixel_shuffle(x.value, s))
    if out.needs_grad:
        def _back():
            x.add_grad(core.pixel_unshuffle(out.grad, s))

        tape.record(out, _back)
    return out


def global_contrast_pool(tape, x: Var) -> Var:
    out = _out(tape, (x,), core.global_contrast_pool(x.value))
    if out.needs_grad:
        x_val = x.value
        hw = x_val.shape[2] * x_val.shape[3]
        mean = x_val.mean(axis=(2, 3), keepdims=True, dtype=np.float64)
        std = np.sqrt(np.square(x_val - mean).mean(axis=(2, 3), keepdims=True,
                                                   dtype=np.float64))

        def _back():
            g = out.grad  # (N,C,1,1)
            # d(std)/dx = (x-mean)/(HW*std), zero where the channel is constant
            safe = np.where(std > 0, std, 1.0)
            dstd = np.where(std > 0, (x_val - mean) / (hw * safe), 0.0)
            x.add_grad((g * (dstd + 1.0 / hw)).astype(DTYPE))

        tape.record(out, _back)
    return out


def reduce_sum(tape, x: Var) -> Var:
    value = float(np.sum(x.value, dtype=np.float64))
    out = _out(tape, (x,), value)
    if out.needs_grad:
        shape = x.value.shape

        def _back():
            x.add_grad(np.full(shape, out.grad, dtype=DTYPE))

        tape.record(out, _back)
    return out


def l1_loss(tape, pred: Var, target) -> Var:
    """Mean absolute difference; gradient is sign(pred - target)/count."""
    t = np.asarray(target, dtype=DTYPE)
    if t.shape != pred.value.shape:
        raise ShapeError(f"l1_loss: prediction shape {pred.value.shape} vs "
                         f"target shape {t.shape}")
    diff = pred.value - t
    value = float(np.mean(np.abs(diff), dtype=np.float64))
    out = _out(tape, (pred,), value)
    if tape is not None:
        tape.kink_signs.append(diff > 0)
        if out.needs_grad:
            count = diff.size

            def _back():
                pred.add_grad(np.sign(diff) * DTYPE(out.grad / count))

            tape.record(out, _back)
    return out


# ---------------------------------------------------------------------------
# finite-difference verification harness
# ---------------------------------------------------------------------------

def _signs_differ(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return any(not np.array_equal(sa, sb) for sa, sb in zip(a, b))


def finite_diff_check(f, p: Parameter, eps: float, num_coords: int = 64,
                      rng=None, exclude_kinks: bool = True) -> float:
    """Compare analytic gradients of ``f`` w.r.t. ``p`` against central
    differences at sampled coordinates.

    ``f(tape)`` must run a deterministic forward pass reading ``p`` (watched
    on the given tape) and return its scalar output Var. Returns the max over
    sampled coordinates of |analytic - numeric| / max(|analytic|, |numeric|,
    1e-6).

    A coordinate whose +/-eps interval straddles a kink (a sign flip at any
    piecewise-linear op, as recorded in ``Tape.kink_signs``) measures a mix of
    two subgradients; such coordinates are skipped when ``exclude_kinks`` is
    set, and further coordinates are drawn so that ``num_coords`` valid
    samples are still compared whenever possible.
    """
    if eps <= 0:
        raise ConfigError(f"finite_diff_check eps must be > 0, got {eps}")
    rng = rng or np.random.default_rng(0)

    tape = Tape()
    out = f(tape)
    if not np.isfinite(out.value):
        raise NumericsError(f"finite_diff_check: non-finite objective {out.value}")
    saved_grad = p.grad.copy()
    p.zero_grad()
    tape.backward(1.0)
    analytic = p.grad.reshape(-1).astype(np.float64)
    p.grad[...] = saved_grad

    flat = p.value.reshape(-1)
    order = rng.permutation(flat.size)
    max_rel = 0.0
    compared = 0
    for i in order:
        if compared >= num_coords:
            break
        orig = flat[i]
        flat[i] = DTYPE(orig + eps)
        h_plus = float(flat[i]) - float(orig)
        tape_p = Tape()
        f_plus = f(tape_p).value
        flat[i] = DTYPE(orig - eps)
        h_minus = float(orig) - float(flat[i])
        tape_m = Tape()
        f_minus = f(tape_m).value
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericsError("finite_diff_check: non-finite objective at "
                                f"perturbed coordinate {i}")
        if exclude_kinks and _signs_differ(tape_p.kink_signs, tape_m.kink_signs):
            continue
        numeric = (f_plus - f_minus) / (h_plus + h_minus)
        rel = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-6)
        max_rel = max(max_rel, rel)
        compared += 1
    return max_rel
