"""Forward-mode automatic differentiation with array-valued dual numbers.

A :class:`Dual` carries a value array of shape ``S`` and a derivative array
of shape ``S + (k,)``, one column per seed direction. Numpy ufuncs dispatch
to it, so user functions written with ``np.sin``, ``np.sqrt`` etc. accept
either plain arrays or duals.
"""

import numpy as np

CHUNK = 8


class NotDifferentiableError(TypeError):
    pass


def _val(x):
    return x.value if isinstance(x, Dual) else x


class Dual:
    __slots__ = ("value", "deriv")
    __array_priority__ = 100

    def __init__(self, value, deriv):
        self.value = np.asarray(value, dtype=float)
        self.deriv = np.asarray(deriv, dtype=float)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def nseed(self):
        return self.deriv.shape[-1]

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Dual(value={self.value!r}, deriv={self.deriv!r})"

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        didx = idx + (slice(None),) if any(i is Ellipsis for i in idx) else idx
        return Dual(self.value[idx], self.deriv[didx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Dual(self.value.reshape(shape),
                    self.deriv.reshape(tuple(shape) + (self.nseed,)))

    def sum(self, axis=None):
        if axis is None:
            axes = tuple(range(self.ndim))
        else:
            axes = tuple(a % self.ndim for a in np.atleast_1d(axis))
        return Dual(self.value.sum(axis=axes), self.deriv.sum(axis=axes))

    # arithmetic --------------------------------------------------------
    def __add__(self, other):
        return np.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return np.subtract(self, other)

    def __rsub__(self, other):
        return np.subtract(other, self)

    def __mul__(self, other):
        return np.multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return np.true_divide(self, other)

    def __rtruediv__(self, other):
        return np.true_divide(other, self)

    def __pow__(self, other):
        return np.power(self, other)

    def __rpow__(self, other):
        return np.power(other, self)

    def __matmul__(self, other):
        return np.matmul(self, other)

    def __rmatmul__(self, other):
        return np.matmul(other, self)

    def __neg__(self):
        return Dual(-self.value, -self.deriv)

    def __pos__(self):
        return self

    def __abs__(self):
        return np.absolute(self)

    # comparisons act on values only (for branching in user code)
    def __lt__(self, other):
        return self.value < _val(other)

    def __le__(self, other):
        return self.value <= _val(other)

    def __gt__(self, other):
        return self.value > _val(other)

    def __ge__(self, other):
        return self.value >= _val(other)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs.get("out") is not None:
            return NotImplemented
        rule = _RULES.get(ufunc)
        if rule is None:
            raise NotDifferentiableError(
                f"no derivative rule for numpy.{ufunc.__name__}")
        return rule(*inputs)


def _d(x):
    # derivative with a trailing seed axis, broadcastable against a dual's
    return x.deriv if isinstance(x, Dual) else None


def _combine(value, *terms):
    # terms: (scale, dual-or-const); sums scale[..., None] * deriv
    deriv = None
    for scale, x in terms:
        d = _d(x)
        if d is None:
            continue
        contrib = np.asarray(scale)[..., None] * d
        deriv = contrib if deriv is None else deriv + contrib
    shape = np.shape(value)
    if deriv.shape[:-1] != shape:
        deriv = np.broadcast_to(deriv, shape + deriv.shape[-1:])
    return Dual(value, deriv)


def _add(a, b):
    return _combine(_val(a) + _val(b), (1.0, a), (1.0, b))


def _sub(a, b):
    return _combine(_val(a) - _val(b), (1.0, a), (-1.0, b))


def _mul(a, b):
    va, vb = _val(a), _val(b)
    return _combine(va * vb, (vb, a), (va, b))


def _div(a, b):
    va, vb = _val(a), _val(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = va / vb
        return _combine(q, (1.0 / vb, a), (-q / vb, b))


def _power(a, b):
    va, vb = _val(a), _val(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = va ** vb
        if isinstance(b, Dual):
            return _combine(out, (vb * va ** (vb - 1), a), (out * np.log(va), b))
        return _combine(out, (vb * va ** (vb - 1), a))


def _matmul(a, b):
    # one constant operand; the seed axis rides along as a batch column
    if isinstance(a, Dual) and isinstance(b, Dual):
        raise NotDifferentiableError("matmul of two duals is not supported")
    if isinstance(b, Dual):
        A = np.asarray(a, dtype=float)
        return Dual(A @ b.value, np.tensordot(A, b.deriv, axes=(-1, 0)))
    B = np.asarray(b, dtype=float)
    if a.ndim == 1:
        return Dual(a.value @ B, np.tensordot(B, a.deriv, axes=(0, 0)))
    return Dual(a.value @ B, np.einsum("ijk,jl->ilk", a.deriv, B))


def _unary(f, df):
    def rule(a):
        va = _val(a)
        with np.errstate(divide="ignore", invalid="ignore"):
            return _combine(f(va), (df(va), a))
    return rule


def _nondiff(name):
    def rule(*args):
        raise NotDifferentiableError(
            f"numpy.{name} is not differentiable; use the smoothed variant")
    return rule


_RULES = {
    np.add: _add,
    np.subtract: _sub,
    np.multiply: _mul,
    np.true_divide: _div,
    np.power: _power,
    np.matmul: _matmul,
    np.negative: lambda a: -a,
    np.positive: lambda a: a,
    np.square: lambda a: _mul(a, a),
    np.exp: _unary(np.exp, np.exp),
    np.log: _unary(np.log, lambda v: 1.0 / v),
    np.sqrt: _unary(np.sqrt, lambda v: 0.5 / np.sqrt(v)),
    np.sin: _unary(np.sin, np.cos),
    np.cos: _unary(np.cos, lambda v: -np.sin(v)),
    np.tan: _unary(np.tan, lambda v: 1.0 / np.cos(v) ** 2),
    np.tanh: _unary(np.tanh, lambda v: 1.0 - np.tanh(v) ** 2),
    np.arctan: _unary(np.arctan, lambda v: 1.0 / (1.0 + v * v)),
    np.absolute: _nondiff("absolute"),
    np.maximum: _nondiff("maximum"),
    np.minimum: _nondiff("minimum"),
    np.sign: _nondiff("sign"),
}


# smoothed nonsmooth primitives ----------------------------------------------

def smooth_abs(x, eps=1e-6):
    """``sqrt(x**2 + eps**2)``, a C-infinity stand-in for ``|x|``."""
    return np.sqrt(x * x + eps * eps)


def smooth_max(a, b, eps=1e-6):
    return 0.5 * (a + b + smooth_abs(a - b, eps))


def smooth_min(a, b, eps=1e-6):
    return 0.5 * (a + b - smooth_abs(a - b, eps))


# helpers ---------------------------------------------------------------------

def value_of(x):
    return np.asarray(_val(x), dtype=float)


def stack(items, axis=0):
    """Stack a mix of duals and plain arrays along a new ``axis``."""
    items = list(items)
    duals = [x for x in items if isinstance(x, Dual)]
    if not duals:
        return np.stack([np.asarray(x, dtype=float) for x in items], axis=axis)
    k = duals[0].nseed
    shape = np.broadcast_shapes(*[np.shape(_val(x)) for x in items])
    vals, ders = [], []
    for x in items:
        v = np.broadcast_to(np.asarray(_val(x), dtype=float), shape)
        vals.append(v)
        if isinstance(x, Dual):
            ders.append(np.broadcast_to(x.deriv, shape + (k,)))
        else:
            ders.append(np.zeros(shape + (k,)))
    ax = axis if axis >= 0 else axis + len(shape) + 1
    return Dual(np.stack(vals, axis=ax), np.stack(ders, axis=ax))


def seeded(z, start=0, count=None):
    """Dual view of vector ``z`` seeded on columns ``start:start+count``."""
    z = np.asarray(z, dtype=float)
    n = z.size
    count = n - start if count is None else count
    deriv = np.zeros((n, count))
    deriv[start + np.arange(count), np.arange(count)] = 1.0
    return Dual(z, deriv)


def _as_output(y, k):
    if isinstance(y, Dual):
        return y.value, y.deriv
    if isinstance(y, (list, tuple)):
        y = stack(y)
        return _as_output(y, k)
    y = np.asarray(y, dtype=float)
    return y, np.zeros(y.shape + (k,))


def jacobian(f, z, chunk=CHUNK):
    """Dense Jacobian of the vector function ``f`` at ``z``.

    Seeds ``chunk`` directions per pass.
    """
    return value_and_jacobian(f, z, chunk)[1]


def gradient(f, z, chunk=CHUNK):
    """Gradient of the scalar function ``f`` at ``z``."""
    return jacobian(f, z, chunk)[0]


def value_and_jacobian(f, z, chunk=CHUNK):
    z = np.asarray(z, dtype=float)
    n = z.size
    if n == 0:
        v = np.atleast_1d(np.asarray(f(z), dtype=float))
        return v, np.zeros((v.size, 0))
    cols = []
    for start in range(0, n, chunk):
        count = min(chunk, n - start)
        v, d = _as_output(f(seeded(z, start, count)), count)
        cols.append(np.reshape(d, (np.size(v), count)))
    return np.atleast_1d(v).ravel(), np.concatenate(cols, axis=1)
