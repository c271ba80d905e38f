"""Dense NCHW tensor math with hand-written backward passes.

This is deliberately not a general autodiff graph: the SR network only needs
"same"-padded convolution, bias, ReLU, a residual add and mean-squared error,
so each op ships its exact backward as a plain function. Tensors are numpy
arrays of shape (N, C, H, W); float32 is the production dtype, but every op
preserves float64 inputs so test harnesses can re-run the pipeline at higher
precision.

All functions are pure: inputs are never mutated and identical inputs give
bitwise-identical outputs.
"""

from __future__ import annotations

from typing import Callable, Iterable, Iterator, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractViolation, DiagnosticError

Array = np.ndarray

PAD_MODES = ("reflect", "zero")


class ParamSet:
    """Ordered, immutable mapping of parameter name -> array.

    Iteration order is insertion order and is stable across save/load, which
    the optimizer and the checkpoint format both rely on. Stored arrays are
    exposed as read-only views; updates always build a new ParamSet.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[str, Array] | Iterable[tuple[str, Array]]):
        items = entries.items() if isinstance(entries, Mapping) else entries
        store: dict[str, Array] = {}
        for name, arr in items:
            if name in store:
                raise ContractViolation(f"duplicate parameter name {name!r}")
            view = np.asarray(arr).view()
            view.flags.writeable = False
            store[name] = view
        self._entries = store

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._entries)

    @property
    def total_count(self) -> int:
        return sum(a.size for a in self._entries.values())

    @property
    def dtype(self) -> np.dtype:
        first = next(iter(self._entries.values()))
        return first.dtype

    def __getitem__(self, name: str) -> Array:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def items(self) -> Iterator[tuple[str, Array]]:
        return iter(self._entries.items())

    def astype(self, dtype) -> "ParamSet":
        return ParamSet((n, a.astype(dtype)) for n, a in self.items())

    def replace(self, name: str, arr: Array) -> "ParamSet":
        if name not in self._entries:
            raise ContractViolation(f"unknown parameter name {name!r}")
        return ParamSet((n, arr if n == name else a) for n, a in self.items())

    def allclose(self, other: "ParamSet", atol: float = 0.0, rtol: float = 0.0) -> bool:
        if self.names != other.names:
            return False
        return all(np.allclose(a, other[n], atol=atol, rtol=rtol) for n, a in self.items())

    def __repr__(self) -> str:
        shapes = ", ".join(f"{n}:{tuple(a.shape)}" for n, a in self.items())
        return f"ParamSet({shapes})"


# Gradients use the same keyed structure as the parameters they pair with.
GradSet = ParamSet


def _check_paired(params: ParamSet, grads: GradSet) -> None:
    if params.names != grads.names:
        raise ContractViolation(
            f"parameter/gradient key mismatch: {params.names} vs {grads.names}"
        )
    for name, p in params.items():
        if p.shape != grads[name].shape:
            raise ContractViolation(
                f"gradient shape mismatch for {name!r}: {p.shape} vs {grads[name].shape}"
            )


def _require_finite(tag: str, arr: Array) -> None:
    if not np.isfinite(arr).all():
        raise ContractViolation(f"{tag} produced non-finite values")


def _pad_input(x: Array, ph: int, pw: int, padding: str) -> Array:
    if padding not in PAD_MODES:
        raise ContractViolation(f"unknown padding mode {padding!r}; expected one of {PAD_MODES}")
    if ph == 0 and pw == 0:
        return x
    if padding == "reflect":
        if x.shape[2] <= ph or x.shape[3] <= pw:
            raise ContractViolation(
                f"input spatial size {x.shape[2]}x{x.shape[3]} too small for reflect "
                f"padding {ph}x{pw}"
            )
        return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode="reflect")
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _fold_axis(g: Array, p: int, axis: int, padding: str) -> Array:
    """Adjoint of padding one axis by p: crop, and for reflect mode fold the
    border gradients back onto their interior source rows."""
    if p == 0:
        return g
    n_pad = g.shape[axis]
    core = np.take(g, range(p, n_pad - p), axis=axis)
    if padding == "zero":
        return core
    core = core.copy()
    n = core.shape[axis]
    head = np.flip(np.take(g, range(0, p), axis=axis), axis=axis)
    tail = np.flip(np.take(g, range(n_pad - p, n_pad), axis=axis), axis=axis)
    idx_head = [slice(None)] * g.ndim
    idx_head[axis] = slice(1, p + 1)
    core[tuple(idx_head)] += head
    idx_tail = [slice(None)] * g.ndim
    idx_tail[axis] = slice(n - 1 - p, n - 1)
    core[tuple(idx_tail)] += tail
    return core


def _conv_check(x: Array, weight: Array, bias: Array | None) -> tuple[int, int, int, int]:
    if x.ndim != 4:
        raise ContractViolation(f"conv2d input must be 4-D (N,C,H,W), got shape {x.shape}")
    if weight.ndim != 4:
        raise ContractViolation(f"conv2d weight must be 4-D (Cout,Cin,kH,kW), got shape {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if x.shape[1] != cin:
        raise ContractViolation(
            f"conv2d channel mismatch: input has {x.shape[1]} channels, weight expects {cin}"
        )
    if kh % 2 == 0 or kw % 2 == 0:
        raise ContractViolation(f"conv2d kernel dims must be odd, got {kh}x{kw}")
    if bias is not None and bias.shape != (cout,):
        raise ContractViolation(
            f"conv2d bias shape {bias.shape} does not match output channels ({cout},)"
        )
    return cout, cin, kh, kw


def _windows(xp: Array, kh: int, kw: int) -> Array:
    # (N, C, H, W, kh, kw) view over the padded input
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))


def conv2d(x: Array, weight: Array, bias: Array | None, padding: str = "reflect") -> Array:
    """Same-size 2-D convolution (windowed sum) plus per-channel bias.

    x: (N,Cin,H,W); weight: (Cout,Cin,kH,kW) with odd kH,kW; bias: (Cout,) or
    None. Output: (N,Cout,H,W).
    """
    cout, _, kh, kw = _conv_check(x, weight, bias)
    xp = _pad_input(x, kh // 2, kw // 2, padding)
    win = _windows(xp, kh, kw)
    n, _, h, w = x.shape
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, -1)
    y = cols @ weight.reshape(cout, -1).T
    y = y.reshape(n, h, w, cout).transpose(0, 3, 1, 2)
    if bias is not None:
        y = y + bias[None, :, None, None]
    _require_finite("conv2d", y)
    return y


def conv2d_backward(
    x: Array,
    weight: Array,
    upstream: Array,
    padding: str = "reflect",
) -> tuple[Array, Array, Array]:
    """Exact gradients of <upstream, conv2d(x, weight, bias)>.

    Returns (grad_input, grad_weight, grad_bias). grad_input accounts for the
    padding mode's adjoint (reflect padding folds border gradients back into
    the interior).
    """
    cout, cin, kh, kw = _conv_check(x, weight, None)
    if upstream.shape != (x.shape[0], cout, x.shape[2], x.shape[3]):
        raise ContractViolation(
            f"upstream shape {upstream.shape} does not match conv2d output "
            f"{(x.shape[0], cout, x.shape[2], x.shape[3])}"
        )
    n, _, h, w = x.shape
    ph, pw = kh // 2, kw // 2

    xp = _pad_input(x, ph, pw, padding)
    win = _windows(xp, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, cin * kh * kw)
    up_cols = upstream.transpose(0, 2, 3, 1).reshape(n * h * w, cout)
    grad_weight = (up_cols.T @ cols).reshape(cout, cin, kh, kw)
    grad_bias = upstream.sum(axis=(0, 2, 3))

    # Gradient w.r.t. the padded input: full correlation of the upstream with
    # the spatially flipped, channel-transposed weight.
    up_full = np.pad(upstream, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    gwin = _windows(up_full, kh, kw)
    hp, wp = h + 2 * ph, w + 2 * pw
    gcols = gwin.transpose(0, 2, 3, 1, 4, 5).reshape(n * hp * wp, cout * kh * kw)
    wflip = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, cout * kh * kw)
    gxp = (gcols @ wflip.T).reshape(n, hp, wp, cin).transpose(0, 3, 1, 2)
    gx = _fold_axis(_fold_axis(gxp, pw, 3, padding), ph, 2, padding)

    return gx, grad_weight, grad_bias


def relu(x: Array) -> Array:
    return np.maximum(x, 0)


def relu_backward(x: Array, upstream: Array) -> Array:
    """Pass upstream where x > 0; subgradient at exactly 0 is 0."""
    return np.where(x > 0, upstream, 0).astype(upstream.dtype, copy=False)


def mse_loss(pred: Array, target: Array) -> tuple[float, Array]:
    """Mean squared error over all elements and its gradient w.r.t. pred."""
    if pred.shape != target.shape:
        raise ContractViolation(
            f"mse_loss shape mismatch: pred {pred.shape} vs target {target.shape}"
        )
    diff = pred - target
    loss = float(np.mean(np.square(diff, dtype=diff.dtype)))
    grad = (2.0 / diff.size) * diff
    if not np.isfinite(loss):
        raise ContractViolation("mse_loss produced a non-finite loss")
    return loss, grad


def sgd_step(params: ParamSet, grads: GradSet, lr: float) -> ParamSet:
    """One plain gradient step p <- p - lr*g; returns a new ParamSet."""
    _check_paired(params, grads)
    return ParamSet((n, p - lr * grads[n]) for n, p in params.items())


LossAndGrad = Callable[[ParamSet], tuple[float, GradSet]]


def finite_difference_check(
    loss_and_grad: LossAndGrad,
    params: ParamSet,
    eps: float,
    coords_per_param: int = 3,
    seed: int = 0,
    abs_threshold: float = 1e-6,
) -> float:
    """Worst relative error between analytic gradients and central differences.

    Samples up to `coords_per_param` coordinates per parameter (seeded, so the
    check is reproducible). Coordinates where both the analytic and numeric
    gradient are below `abs_threshold` are compared by absolute difference
    instead, to avoid meaningless ratios near zero.
    """
    if eps <= 0:
        raise ContractViolation(f"eps must be > 0, got {eps}")
    loss0, grads = loss_and_grad(params)
    if not np.isfinite(loss0):
        raise DiagnosticError(f"loss is non-finite ({loss0}) at the supplied parameters")
    _check_paired(params, grads)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        g = grads[name]
        k = min(coords_per_param, p.size)
        coords = rng.choice(p.size, size=k, replace=False)
        for flat in coords:
            bumped = p.copy().reshape(-1)
            base = bumped[flat]
            bumped[flat] = base + eps
            lp, _ = loss_and_grad(params.replace(name, bumped.reshape(p.shape)))
            bumped[flat] = base - eps
            lm, _ = loss_and_grad(params.replace(name, bumped.reshape(p.shape)))
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise DiagnosticError(f"non-finite loss while perturbing {name}[{flat}]")
            fd = (lp - lm) / (2.0 * eps)
            a = float(g.reshape(-1)[flat])
            scale = max(abs(a), abs(fd))
            err = abs(a - fd) if scale < abs_threshold else abs(a - fd) / scale
            worst = max(worst, err)
    return worst
