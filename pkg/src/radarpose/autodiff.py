"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ndarray plus a gradient accumulator and a
link to the operation that produced it. Running a computation while
gradients are enabled records a tape implicitly through those links;
``loss.backward()`` walks the tape in reverse topological order and
accumulates gradients into every tensor created with
``requires_grad=True``.

Only first-order gradients are supported. 64-bit is the verification
dtype (finite differences are unreliable at 32-bit); 32-bit tensors are
allowed for training speed. ``checked_mode`` adds NaN/Inf screening at
every operation boundary.
"""

import contextlib
import dataclasses
import itertools

import numpy as np
from scipy.special import expit

_GRAD_ENABLED = True
_CHECKED = False


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def checked_mode():
    """Reject NaN/Inf at every operation boundary inside the block."""
    global _CHECKED
    prev = _CHECKED
    _CHECKED = True
    try:
        yield
    finally:
        _CHECKED = prev


class Tensor:
    """N-dimensional array participating in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, np.ndarray) and dtype is None:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=dtype if dtype is not None else np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        # Keep an existing buffer (it may be a view into pooled storage).
        if self.grad is not None:
            self.grad.fill(0.0)

    def _accum(self, g):
        if self.grad is None:
            # First contribution: own a copy (g may be a view or reused).
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Backpropagate from a scalar output through the recorded tape."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # Arithmetic sugar; the module-level functions do the work.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _check(data, op: str):
    if _CHECKED and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")


def _make(data, parents, backward_fn, op: str) -> Tensor:
    _check(data, op)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D tensors")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(out_data, (a, b), backward, "matmul")


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # expit is the overflow-free logistic; exact saturation at |x| ~ 40.
    s = expit(x.data)

    def backward(g):
        x._accum(g * s * (1.0 - s))

    return _make(s, (x,), backward, "sigmoid")


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    t = np.tanh(x.data)

    def backward(g):
        x._accum(g * (1.0 - t * t))

    return _make(t, (x,), backward, "tanh")


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        x._accum(s * (g - dot))

    return _make(s, (x,), backward, "softmax")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = list(itertools.accumulate([0] + [t.data.shape[axis] for t in tensors]))

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return _make(out_data, tuple(tensors), backward, "concat")


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.reshape(shape)

    def backward(g):
        x._accum(g.reshape(x.data.shape))

    return _make(out_data, (x,), backward, "reshape")


def transpose(x, axes=None) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.transpose(axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        x._accum(g.transpose(inv))

    return _make(out_data, (x,), backward, "transpose")


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out_data = x.data[sl]

    def backward(g):
        full = np.zeros_like(x.data)
        full[sl] = g
        x._accum(full)

    return _make(out_data, (x,), backward, "slice")


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            x._accum(np.broadcast_to(g, x.data.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            x._accum(np.broadcast_to(g, x.data.shape).copy())

    return _make(out_data, (x,), backward, "reduce_sum")


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else x.data.shape[axis]

    def backward(g):
        scaled = g / count
        if axis is None:
            x._accum(np.broadcast_to(scaled, x.data.shape).copy())
        else:
            if not keepdims:
                scaled = np.expand_dims(scaled, axis)
            x._accum(np.broadcast_to(scaled, x.data.shape).copy())

    return _make(out_data, (x,), backward, "reduce_mean")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of a (V, L) table; backward scatter-adds (dense grad)."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError("ids must be integers")
    vocab = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ValueError(f"id out of range for vocabulary of {vocab}")
    out_data = table.data[ids]

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))

    return _make(out_data, (table,), backward, "embedding_lookup")


def sparse_categorical_cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean of -log softmax(logits)[target] over all (optionally weighted) rows.

    ``logits`` has shape (..., V); ``targets`` is an integer array of the
    leading shape. ``weights`` (0/1, same leading shape) masks positions,
    e.g. padding, out of the mean.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if not np.issubdtype(targets.dtype, np.integer):
        raise ValueError("targets must be integers")
    vocab = logits.data.shape[-1]
    flat = logits.data.reshape(-1, vocab)
    t = targets.reshape(-1)
    if t.shape[0] != flat.shape[0]:
        raise ValueError("targets do not match logits rows")
    if t.size and (t.min() < 0 or t.max() >= vocab):
        raise ValueError(f"target out of range for vocabulary of {vocab}")
    if weights is None:
        w = None
        denom = float(flat.shape[0])
    else:
        w = np.asarray(weights, dtype=flat.dtype).reshape(-1)
        denom = float(w.sum())
        if denom <= 0:
            raise ValueError("weights must select at least one position")

    shifted = flat - flat.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    sum_e = e.sum(axis=1)
    rows = np.arange(flat.shape[0])
    nll = np.log(sum_e) - shifted[rows, t]
    if w is not None:
        nll = nll * w
    out_data = np.asarray(nll.sum() / denom, dtype=flat.dtype)

    def backward(g):
        probs = e / sum_e[:, None]
        probs[rows, t] -= 1.0
        if w is not None:
            probs *= w[:, None]
        probs *= g / denom
        logits._accum(probs.reshape(logits.data.shape))

    return _make(out_data, (logits,), backward, "sparse_categorical_cross_entropy")


def cosine_similarity(a, b) -> Tensor:
    """Scalar a.b / (|a||b|) for two same-size tensors; zero norms are errors."""
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.data.reshape(-1), b.data.reshape(-1)
    if av.shape != bv.shape:
        raise ValueError("cosine_similarity requires equal sizes")
    na, nb = np.linalg.norm(av), np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine_similarity undefined for zero-norm input")
    cos = float(av @ bv) / (na * nb)
    out_data = np.asarray(cos, dtype=np.result_type(av.dtype, bv.dtype))

    def backward(g):
        if a.requires_grad:
            a._accum((g * (bv / (na * nb) - cos * av / (na * na))).reshape(a.data.shape))
        if b.requires_grad:
            b._accum((g * (av / (na * nb) - cos * bv / (nb * nb))).reshape(b.data.shape))

    return _make(out_data, (a, b), backward, "cosine_similarity")


# --- fused primitives -------------------------------------------------
# The recurrent and attention loops run hundreds of small operations per
# sample, so their inner expressions are provided as single taped ops.
# Each one carries its own analytic backward and is covered by the
# finite-difference suite like any other primitive.


def affine(x, w) -> Tensor:
    """x @ w with the bias absorbed as w's last row: x @ w[:-1] + w[-1]."""
    x, w = _as_tensor(x), _as_tensor(w)
    n = x.data.shape[1]
    if w.data.shape[0] != n + 1:
        raise ValueError(f"weight must have {n + 1} rows (bias row last), got {w.data.shape}")
    out_data = x.data @ w.data[:n] + w.data[n]

    def backward(g):
        if x.requires_grad:
            x._accum(g @ w.data[:n].T)
        if w.requires_grad:
            if w.grad is None:
                w.grad = np.zeros_like(w.data)
            w.grad[:n] += x.data.T @ g
            w.grad[n] += g.sum(axis=0)

    return _make(out_data, (x, w), backward, "affine")


def affine_pair(s, w, x, u) -> Tensor:
    """Gate pre-activation s @ w + x @ u[:-1] + u[-1] as one operation."""
    s, w, x, u = _as_tensor(s), _as_tensor(w), _as_tensor(x), _as_tensor(u)
    n = x.data.shape[1]
    if u.data.shape[0] != n + 1:
        raise ValueError(f"input-side weight must have {n + 1} rows, got {u.data.shape}")
    out_data = s.data @ w.data + x.data @ u.data[:n] + u.data[n]

    def backward(g):
        if s.requires_grad:
            s._accum(g @ w.data.T)
        if w.requires_grad:
            w._accum(s.data.T @ g)
        if x.requires_grad:
            x._accum(g @ u.data[:n].T)
        if u.requires_grad:
            if u.grad is None:
                u.grad = np.zeros_like(u.data)
            u.grad[:n] += x.data.T @ g
            u.grad[n] += g.sum(axis=0)

    return _make(out_data, (s, w, x, u), backward, "affine_pair")


def gru_state_update(z, s_prev, s_tilde) -> Tensor:
    """S = Z o S_prev + (1 - Z) o S~ as one operation."""
    z, s_prev, s_tilde = _as_tensor(z), _as_tensor(s_prev), _as_tensor(s_tilde)
    out_data = z.data * s_prev.data + (1.0 - z.data) * s_tilde.data

    def backward(g):
        if z.requires_grad:
            z._accum(g * (s_prev.data - s_tilde.data))
        if s_prev.requires_grad:
            s_prev._accum(g * z.data)
        if s_tilde.requires_grad:
            s_tilde._accum(g * (1.0 - z.data))

    return _make(out_data, (z, s_prev, s_tilde), backward, "gru_state_update")


def additive_attention_scores(query, w, keys, v) -> Tensor:
    """Alignment scores v . tanh(query @ w + keys_j) for all j, as one op.

    query: (B, D), w: (D, A), keys: (B, N, A), v: (A, 1) -> (B, N).
    """
    query, w, keys, v = _as_tensor(query), _as_tensor(w), _as_tensor(keys), _as_tensor(v)
    q = query.data @ w.data  # (B, A)
    t = np.tanh(q[:, None, :] + keys.data)  # (B, N, A)
    out_data = np.einsum("bna,a->bn", t, v.data[:, 0])

    def backward(g):
        gp = (g[:, :, None] * v.data[:, 0][None, None, :]) * (1.0 - t * t)  # (B, N, A)
        if keys.requires_grad:
            keys._accum(gp)
        gq = gp.sum(axis=1)  # (B, A)
        if query.requires_grad:
            query._accum(gq @ w.data.T)
        if w.requires_grad:
            w._accum(query.data.T @ gq)
        if v.requires_grad:
            v._accum(np.einsum("bna,bn->a", t, g)[:, None])

    return _make(out_data, (query, w, keys, v), backward, "additive_attention_scores")


def weighted_context(weights, states) -> Tensor:
    """Context vector sum_j weights_j * states_j: (B, N) x (B, N, E) -> (B, E)."""
    weights, states = _as_tensor(weights), _as_tensor(states)
    out_data = np.einsum("bn,bne->be", weights.data, states.data)

    def backward(g):
        if weights.requires_grad:
            weights._accum(np.einsum("be,bne->bn", g, states.data))
        if states.requires_grad:
            states._accum(weights.data[:, :, None] * g[:, None, :])

    return _make(out_data, (weights, states), backward, "weighted_context")


DEFAULT_FD_EPS = 1e-5  # central-difference sweet spot at 64-bit


def _numeric_gradient(f, param: Tensor, eps: float, coords=None) -> np.ndarray:
    """Central-difference gradient of f w.r.t. every (or given) coordinate."""
    flat = param.data.reshape(-1)
    out = np.zeros_like(flat)
    indices = range(flat.shape[0]) if coords is None else coords
    with no_grad():
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f().data)
            flat[i] = orig - eps
            f_minus = float(f().data)
            flat[i] = orig
            out[i] = (f_plus - f_minus) / (2.0 * eps)
    return out.reshape(param.data.shape)


def _analytic_gradients(f, params):
    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def finite_difference_check(f, params, eps: float = DEFAULT_FD_EPS) -> float:
    """Max relative error between recorded gradients and central differences.

    ``f`` must be a deterministic zero-argument callable returning a
    scalar Tensor built from ``params``. Runs f once with the tape to get
    analytic gradients, then perturbs every coordinate of every param by
    +/- eps (tape off) and compares. Use 64-bit params; the relative
    error denominator is max(|analytic|, |numeric|, 1e-8).
    """
    params = list(params)
    analytic = _analytic_gradients(f, params)
    worst = 0.0
    for p, an in zip(params, analytic):
        numeric = _numeric_gradient(f, p, eps)
        denom = np.maximum(np.maximum(np.abs(numeric), np.abs(an)), 1e-8)
        worst = max(worst, float((np.abs(numeric - an) / denom).max()))
    return worst


@dataclasses.dataclass
class FdParamReport:
    name: str
    max_rel_err: float  # over all coordinates, 1e-8 denominator floor
    max_rel_err_conditioned: float  # over coordinates with |grad| >= cond_floor
    norm_rel_err: float  # ||numeric - analytic|| / max(norms, 1e-8)
    conditioned_fraction: float


@dataclasses.dataclass
class FdReport:
    per_param: list
    max_rel_err: float
    max_rel_err_conditioned: float
    max_norm_rel_err: float


def finite_difference_report(f, named_params, eps: float = DEFAULT_FD_EPS,
                             cond_floor: float = 1e-6) -> FdReport:
    """Per-parameter central-difference comparison with conditioning split.

    Central differences at 64-bit carry an absolute noise floor of about
    |f| * 1e-16 / eps, so coordinates whose true gradient sits below that
    floor cannot be certified by any finite-difference oracle; this
    report separates them out. ``max_rel_err_conditioned`` covers
    coordinates where max(|analytic|, |numeric|) >= cond_floor;
    ``norm_rel_err`` compares whole-tensor gradients.
    """
    named_params = list(named_params)
    params = [p for _, p in named_params]
    analytic = _analytic_gradients(f, params)
    rows = []
    for (name, p), an in zip(named_params, analytic):
        numeric = _numeric_gradient(f, p, eps)
        diff = np.abs(numeric - an)
        denom = np.maximum(np.maximum(np.abs(numeric), np.abs(an)), 1e-8)
        rel = diff / denom
        conditioned = np.maximum(np.abs(numeric), np.abs(an)) >= cond_floor
        norm_rel = float(np.linalg.norm(diff) / max(np.linalg.norm(numeric),
                                                    np.linalg.norm(an), 1e-8))
        rows.append(FdParamReport(
            name=name,
            max_rel_err=float(rel.max()),
            max_rel_err_conditioned=float(rel[conditioned].max()) if conditioned.any() else 0.0,
            norm_rel_err=norm_rel,
            conditioned_fraction=float(conditioned.mean()),
        ))
    return FdReport(
        per_param=rows,
        max_rel_err=max(r.max_rel_err for r in rows),
        max_rel_err_conditioned=max(r.max_rel_err_conditioned for r in rows),
        max_norm_rel_err=max(r.norm_rel_err for r in rows),
    )
