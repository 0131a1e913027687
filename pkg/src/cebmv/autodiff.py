"""Reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: every operation returns a new Tensor that records its
parent tensors and a closure mapping the output adjoint to parent
adjoints.  ``backward`` topologically sorts the recorded graph from a
scalar output and accumulates adjoints into ``.grad``.

Design constraints the op set lives under:

* float64 only, numpy arrays underneath, single thread assumed;
* wrapped arrays are frozen (``writeable=False``) so a live graph can
  never be mutated behind our back -- parameter updates go through
  ``Tensor.assign_`` between steps, when no graph references the data;
* every op validates finiteness of its output and raises
  ``NonFiniteError`` at the first NaN/inf instead of letting it
  propagate silently.
"""

from __future__ import annotations

import numpy as np


class NonFiniteError(ArithmeticError):
    """A tensor value (input or op output) is NaN or infinite."""


class GraphError(RuntimeError):
    """Structural misuse of the autodiff graph (non-scalar backward, ...)."""


def _as_array(values, op: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, order="C", copy=True)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")
    arr.flags.writeable = False
    return arr


class Tensor:
    """A float64 array plus the graph edge that produced it.

    ``requires_grad`` marks leaves whose adjoint should be retained.
    Op outputs require grad iff any parent does.  ``grad`` is a plain
    numpy array; repeated ``backward`` calls accumulate into it until
    ``zero_grad`` clears it.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op")

    def __init__(self, values, requires_grad=False, *, _parents=(), _vjp=None, _op="leaf"):
        self.data = _as_array(values, _op)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad = None
        self._parents = tuple(_parents)
        self._vjp = _vjp
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def assign_(self, values) -> None:
        """Overwrite a leaf's values in place (parameter update / EMA).

        Only legal on leaves, and only between steps: any graph built
        from the old values is stale after this call.
        """
        if self._parents:
            raise GraphError("assign_ is only allowed on leaf tensors")
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise ValueError(f"assign_ shape {arr.shape} != {self.data.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("assign_ with non-finite values")
        self.data.flags.writeable = True
        np.copyto(self.data, arr)
        self.data.flags.writeable = False

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def _make(values, parents, vjp, op) -> Tensor:
    return Tensor(values, _parents=parents, _vjp=vjp, _op=op)


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    bm = b.data.T if transpose_b else b.data
    if a.data.shape[1] != bm.shape[0]:
        raise ValueError(f"matmul inner dims differ: {a.shape} @ {b.shape} (transpose_b={transpose_b})")
    out = a.data @ bm

    def vjp(g):
        if transpose_b:
            return g @ b.data, g.T @ a.data
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), vjp, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        def vjp(g):
            return g, g
    elif a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        # row-wise bias
        def vjp(g):
            return g, g.sum(axis=0)
    else:
        raise ValueError(f"add shapes incompatible: {a.shape} + {b.shape}")
    return _make(a.data + b.data, (a, b), vjp, "add")


def subtract(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        def vjp(g):
            return g, -g
    elif a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        def vjp(g):
            return g, -g.sum(axis=0)
    else:
        raise ValueError(f"subtract shapes incompatible: {a.shape} - {b.shape}")
    return _make(a.data - b.data, (a, b), vjp, "subtract")


def scalar_multiply(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scalar_multiply")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (g * (2.0 * a.data),), "square")


def sum_all(a: Tensor) -> Tensor:
    return _make(a.data.sum(), (a,), lambda g: (np.full(a.shape, float(g)),), "sum_all")


def mean_all(a: Tensor) -> Tensor:
    inv = 1.0 / a.data.size
    return _make(a.data.mean(), (a,), lambda g: (np.full(a.shape, float(g) * inv),), "mean_all")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ValueError("concat of no tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tensors, vjp, "concat")


def stop_gradient(a: Tensor) -> Tensor:
    """Detach: same values, no parents, zero outgoing adjoint."""
    return Tensor(a.data, requires_grad=False, _op="stop_gradient")


def dot_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise inner products of two [B, n] tensors -> [B]."""
    if a.shape != b.shape or a.data.ndim != 2:
        raise ValueError(f"dot_rows expects matching 2-d shapes, got {a.shape}, {b.shape}")
    out = np.einsum("ij,ij->i", a.data, b.data)

    def vjp(g):
        return g[:, None] * b.data, g[:, None] * a.data

    return _make(out, (a, b), vjp, "dot_rows")


def log_softmax_rows(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"log_softmax_rows expects 2-d input, got {a.shape}")
    m = a.data.max(axis=1, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    softmax = np.exp(out)

    def vjp(g):
        return (g - softmax * g.sum(axis=1, keepdims=True),)

    return _make(out, (a,), vjp, "log_softmax_rows")


def l2_normalize_rows(v: Tensor) -> Tensor:
    """Project rows onto the unit sphere; rows with norm < 1e-12 are an error.

    Jacobian of u = v/|v| is (I - u u^T)/|v|, applied row by row.
    """
    vec_in = v.data.ndim == 1
    x = v.data[None, :] if vec_in else v.data
    if x.ndim != 2:
        raise ValueError(f"l2_normalize_rows expects 1-d or 2-d input, got {v.shape}")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("l2_normalize_rows: row norm below 1e-12")
    u = x / norms

    def vjp(g):
        gm = g[None, :] if vec_in else g
        proj = gm - u * np.einsum("ij,ij->i", gm, u)[:, None]
        out = proj / norms
        return (out[0] if vec_in else out,)

    return _make(u[0] if vec_in else u, (v,), vjp, "l2_normalize_rows")


def householder_apply(mu: Tensor, z_raw: Tensor) -> Tensor:
    """Rotate north-pole frame samples onto each row's mean direction.

    Applies the Householder reflection H = I - 2 a a^T / (a^T a) with
    a = e1 - mu to each row of ``z_raw``; H maps e1 to mu exactly.  Rows
    where |e1 - mu| < 1e-9 use the identity map (mu already at the pole),
    with zero adjoint into mu for those rows.  Gradients flow to both
    arguments, which keeps pathwise derivatives of sphere samples exact
    when the raw draw is held fixed.
    """
    if mu.shape != z_raw.shape or mu.data.ndim != 2:
        raise ValueError(f"householder_apply expects matching 2-d shapes, got {mu.shape}, {z_raw.shape}")
    a = -mu.data
    a[:, 0] += 1.0  # a = e1 - mu
    q = np.einsum("ij,ij->i", a, a)
    degenerate = np.sqrt(q) < 1e-9
    q_safe = np.where(degenerate, 1.0, q)
    c = np.einsum("ij,ij->i", a, z_raw.data)
    out = z_raw.data - (2.0 * c / q_safe)[:, None] * a
    out[degenerate] = z_raw.data[degenerate]

    def vjp(g):
        ga = np.einsum("ij,ij->i", g, a)
        # d out/d a contracted with g, per row:
        #   -2 [ (g.a) s / q + c g / q - 2 c (g.a) a / q^2 ]
        grad_a = (-2.0 / q_safe)[:, None] * (
            ga[:, None] * z_raw.data + c[:, None] * g - (2.0 * c * ga / q_safe)[:, None] * a
        )
        grad_a[degenerate] = 0.0
        grad_z = g - (2.0 * ga / q_safe)[:, None] * a
        grad_z[degenerate] = g[degenerate]
        return -grad_a, grad_z

    return _make(out, (mu, z_raw), vjp, "householder_apply")


class RunningStats:
    """Exponential-moving batch statistics for standardization layers."""

    __slots__ = ("mean", "var", "momentum", "updates")

    def __init__(self, dim: int, momentum: float = 0.9):
        self.mean = np.zeros(dim, dtype=np.float64)
        self.var = np.ones(dim, dtype=np.float64)
        self.momentum = float(momentum)
        self.updates = 0

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        m = self.momentum
        self.mean = m * self.mean + (1.0 - m) * batch_mean
        self.var = m * self.var + (1.0 - m) * batch_var
        self.updates += 1


def batch_standardize(x: Tensor, gain: Tensor, bias: Tensor, state: RunningStats,
                      training: bool, eps: float = 1e-5) -> Tensor:
    """Standardize columns, then apply a learned affine (gain, bias).

    Training mode uses biased batch moments and updates ``state`` as a
    side effect; eval mode reads ``state`` and leaves it untouched, so
    two eval passes over the same input are bit-identical.
    """
    if x.data.ndim != 2:
        raise ValueError(f"batch_standardize expects 2-d input, got {x.shape}")
    b_sz, dim = x.shape
    if gain.shape != (dim,) or bias.shape != (dim,):
        raise ValueError("batch_standardize gain/bias must match feature dim")

    if training:
        if b_sz < 2:
            raise ValueError("batch_standardize needs batch size >= 2 in training mode")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        state.update(mu, var)
    else:
        mu = state.mean
        var = state.var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = xhat * gain.data + bias.data

    def vjp(g):
        g_gain = (g * xhat).sum(axis=0)
        g_bias = g.sum(axis=0)
        g_xhat = g * gain.data
        if training:
            # standard batch-norm backward through the batch moments
            centered = x.data - mu
            g_var = (g_xhat * centered).sum(axis=0) * (-0.5) * inv_std**3
            g_mu = -(g_xhat.sum(axis=0)) * inv_std + g_var * (-2.0 / b_sz) * centered.sum(axis=0)
            g_x = g_xhat * inv_std + (2.0 / b_sz) * g_var * centered + g_mu / b_sz
        else:
            g_x = g_xhat * inv_std
        return g_x, g_gain, g_bias

    return _make(out, (x, gain, bias), vjp, "batch_standardize")


# ---------------------------------------------------------------------------
# backward pass


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(node) into ``.grad`` for every node that
    requires grad.  ``output`` must be scalar (size 1)."""
    if output.data.size != 1:
        raise GraphError(f"backward from non-scalar output of shape {output.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    adjoint: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad or pg is None:
                continue
            cur = adjoint.get(id(p))
            adjoint[id(p)] = pg if cur is None else cur + pg


def grad_check(f, x: Tensor, step: float = 1e-5) -> float:
    """Compare analytic gradients of scalar-valued ``f`` against central
    finite differences at ``x``.

    ``f`` must be deterministic (fix any RNG draws inside a closure) and
    is called with a Tensor; returns the max over coordinates of
    |analytic - numeric| / max(1, |numeric|).
    """
    probe = Tensor(x.data, requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise GraphError("grad_check target must return a scalar")
    backward(out)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)

    base = np.array(probe.data, copy=True)
    numeric = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        bumped = base.copy()
        bumped[idx] = base[idx] + step
        f_plus = f(Tensor(bumped)).item()
        bumped[idx] = base[idx] - step
        f_minus = f(Tensor(bumped)).item()
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError("grad_check probe evaluated to a non-finite value")
        numeric[idx] = (f_plus - f_minus) / (2.0 * step)
        it.iternext()

    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
