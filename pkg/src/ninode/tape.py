"""Reverse-mode differentiation over a dynamically recorded tape.

The computation graph of a training step is built once per rollout from a
small set of dense vector/matrix primitives.  Recording is single-threaded
per rollout; a tape owns its nodes and is discarded afterwards.  The
backward pass visits operations in exact reverse recording order, which is
a valid reverse topological order because parents are always recorded
before their consumers.

Conventions:
  * node values are float64 ``np.ndarray``s or ``np.float64`` scalars and
    are never mutated after recording,
  * adjoint accumulation never operates in place, so backward functions may
    return aliased arrays,
  * constants (step sizes, index maps, floors) live in ``Node.aux`` and do
    not receive gradients.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError

__all__ = ["Node", "GradientTape", "grad", "OPS"]


class Node:
    """One recorded value: a leaf (input/parameter) or a primitive result."""

    __slots__ = ("value", "op", "parents", "aux", "adj", "name", "index")

    def __init__(self, value, op, parents, aux, name=None):
        self.value = value
        self.op = op
        self.parents = parents
        self.aux = aux
        self.adj = None
        self.name = name
        self.index = -1

    def __repr__(self):  # pragma: no cover - debugging aid
        shape = getattr(self.value, "shape", ())
        return f"Node({self.op or 'leaf'}, shape={shape}, name={self.name})"


# ---------------------------------------------------------------------------
# primitive registry: op -> (forward, backward)
#
# forward(parent_values, aux) -> value
# backward(node, g) -> tuple of parent adjoints (None for no gradient)
# ---------------------------------------------------------------------------


def _f_add(p, aux):
    return p[0] + p[1]


def _b_add(node, g):
    return (g, g)


def _f_sub(p, aux):
    return p[0] - p[1]


def _b_sub(node, g):
    return (g, -g)


def _f_neg(p, aux):
    return -p[0]


def _b_neg(node, g):
    return (-g,)


def _f_mul(p, aux):
    return p[0] * p[1]


def _b_mul(node, g):
    a, b = node.parents
    return (g * b.value, g * a.value)


def _f_smul(p, aux):
    return p[0] * aux


def _b_smul(node, g):
    return (g * node.aux,)


def _f_axpy(p, aux):
    return aux * p[0] + p[1]


def _b_axpy(node, g):
    return (node.aux * g, g)


def _f_cmulv(p, aux):
    return p[0] * aux


def _b_cmulv(node, g):
    return (g * node.aux,)


def _f_matvec(p, aux):
    return p[0] @ p[1]


def _b_matvec(node, g):
    W, x = node.parents
    return (np.outer(g, x.value), W.value.T @ g)


def _f_matvec_t(p, aux):
    return p[0].T @ p[1]


def _b_matvec_t(node, g):
    W, v = node.parents
    return (np.outer(v.value, g), W.value @ g)


def _f_affine(p, aux):
    return p[0] @ p[1] + p[2]


def _b_affine(node, g):
    W, x, _ = node.parents
    return (np.outer(g, x.value), W.value.T @ g, g)


def _f_tanh(p, aux):
    return np.tanh(p[0])


def _b_tanh(node, g):
    y = node.value
    return (g * (1.0 - y * y),)


def _f_dtanh_mul(p, aux):
    a, u = p
    return (1.0 - a * a) * u


def _b_dtanh_mul(node, g):
    a, u = node.parents
    return (-2.0 * g * a.value * u.value, g * (1.0 - a.value * a.value))


def _f_dot(p, aux):
    return np.float64(p[0] @ p[1])


def _b_dot(node, g):
    a, b = node.parents
    return (g * b.value, g * a.value)


def _f_sumsq(p, aux):
    return np.float64(p[0] @ p[0])


def _b_sumsq(node, g):
    return (2.0 * g * node.parents[0].value,)


def _f_quadform(p, aux):
    x = p[0]
    return np.float64(x @ (aux @ x))


def _b_quadform(node, g):
    x = node.parents[0].value
    Q = node.aux
    return (g * ((Q + Q.T) @ x),)


def _f_concat(p, aux):
    return np.concatenate((p[0], p[1]))


def _b_concat(node, g):
    na = node.parents[0].value.shape[0]
    return (g[:na].copy(), g[na:].copy())


def _f_head(p, aux):
    return p[0][:aux].copy()


def _b_head(node, g):
    full = np.zeros_like(node.parents[0].value)
    full[: node.aux] = g
    return (full,)


def _f_pad(p, aux):
    out = np.zeros(aux)
    out[: p[0].shape[0]] = p[0]
    return out


def _b_pad(node, g):
    return (g[: node.parents[0].value.shape[0]].copy(),)


_TRIU_CACHE: dict[int, tuple] = {}
_TRIL_CACHE: dict[int, tuple] = {}


def _triu_idx(m):
    if m not in _TRIU_CACHE:
        _TRIU_CACHE[m] = np.triu_indices(m, k=1)
    return _TRIU_CACHE[m]


def _tril_idx(m):
    if m not in _TRIL_CACHE:
        _TRIL_CACHE[m] = np.tril_indices(m)
    return _TRIL_CACHE[m]


def _f_skew_from_vec(p, aux):
    m = aux
    iu = _triu_idx(m)
    A = np.zeros((m, m))
    A[iu] = p[0]
    return A - A.T


def _b_skew_from_vec(node, g):
    iu = _triu_idx(node.aux)
    return (g[iu] - g[iu[1], iu[0]],)


def _f_lowtri_from_vec(p, aux):
    m = aux
    il = _tril_idx(m)
    L = np.zeros((m, m))
    L[il] = p[0]
    return L


def _b_lowtri_from_vec(node, g):
    il = _tril_idx(node.aux)
    return (g[il].copy(),)


def _f_gram_eps(p, aux):
    L = p[0]
    out = L @ L.T
    out[np.diag_indices_from(out)] += aux
    return out


def _b_gram_eps(node, g):
    L = node.parents[0].value
    return ((g + g.T) @ L,)


def _f_specnorm_uv(p, aux):
    u, v = aux
    return np.float64(u @ p[0] @ v)


def _b_specnorm_uv(node, g):
    u, v = node.aux
    return (g * np.outer(u, v),)


def _f_scale_to(p, aux):
    return p[0] * (aux / p[1])


def _b_scale_to(node, g):
    V, s = node.parents
    t = node.aux
    factor = t / s.value
    return (g * factor, np.float64(-(factor / s.value) * np.sum(g * V.value)))


def _f_spring_force(p, aux):
    kl, kn = aux
    d = p[0]
    return kl * d + kn * d**3


def _b_spring_force(node, g):
    kl, kn = node.aux
    d = node.parents[0].value
    return (g * (kl + 3.0 * kn * d * d),)


def _f_rk4_combine(p, aux):
    y, k1, k2, k3, k4 = p
    return y + (aux / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _b_rk4_combine(node, g):
    h = node.aux
    return (g, (h / 6.0) * g, (h / 3.0) * g, (h / 3.0) * g, (h / 6.0) * g)


def _f_cayley(p, aux):
    A = p[0]
    eye = np.eye(A.shape[0])
    return (eye - A) @ np.linalg.inv(eye + A)


def _b_cayley(node, g):
    A = node.parents[0].value
    Q = node.value
    eye = np.eye(A.shape[0])
    B = np.linalg.inv(eye + A)
    return (-(eye + Q).T @ g @ B.T,)


OPS = {
    "add": (_f_add, _b_add),
    "sub": (_f_sub, _b_sub),
    "neg": (_f_neg, _b_neg),
    "mul": (_f_mul, _b_mul),
    "smul": (_f_smul, _b_smul),
    "axpy": (_f_axpy, _b_axpy),
    "cmulv": (_f_cmulv, _b_cmulv),
    "matvec": (_f_matvec, _b_matvec),
    "matvec_t": (_f_matvec_t, _b_matvec_t),
    "affine": (_f_affine, _b_affine),
    "tanh": (_f_tanh, _b_tanh),
    "dtanh_mul": (_f_dtanh_mul, _b_dtanh_mul),
    "dot": (_f_dot, _b_dot),
    "sumsq": (_f_sumsq, _b_sumsq),
    "quadform": (_f_quadform, _b_quadform),
    "concat": (_f_concat, _b_concat),
    "head": (_f_head, _b_head),
    "pad": (_f_pad, _b_pad),
    "skew_from_vec": (_f_skew_from_vec, _b_skew_from_vec),
    "lowtri_from_vec": (_f_lowtri_from_vec, _b_lowtri_from_vec),
    "gram_eps": (_f_gram_eps, _b_gram_eps),
    "specnorm_uv": (_f_specnorm_uv, _b_specnorm_uv),
    "scale_to": (_f_scale_to, _b_scale_to),
    "spring_force": (_f_spring_force, _b_spring_force),
    "rk4_combine": (_f_rk4_combine, _b_rk4_combine),
    "cayley": (_f_cayley, _b_cayley),
}


class GradientTape:
    """Ordered record of primitive operations with identified parameter leaves."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    # -- recording ----------------------------------------------------------

    def _append(self, node: Node) -> Node:
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    def leaf(self, value, name=None) -> Node:
        value = np.asarray(value, dtype=np.float64)
        return self._append(Node(value, None, (), None, name=name))

    def param(self, name: str, value) -> Node:
        """Record a parameter slot.  Gradients are reported under ``name``."""
        if name in self.params:
            raise ContractError(f"duplicate parameter slot {name!r}")
        node = self.leaf(value, name=name)
        self.params[name] = node
        return node

    def apply(self, op: str, *parents: Node, aux=None) -> Node:
        fwd = OPS[op][0]
        value = fwd(tuple(p.value for p in parents), aux)
        return self._append(Node(value, op, parents, aux))

    # -- primitive helpers (thin wrappers, kept for call-site readability) --

    def add(self, a, b):
        return self.apply("add", a, b)

    def sub(self, a, b):
        return self.apply("sub", a, b)

    def neg(self, a):
        return self.apply("neg", a)

    def mul(self, a, b):
        return self.apply("mul", a, b)

    def smul(self, a, c: float):
        return self.apply("smul", a, aux=float(c))

    def axpy(self, c: float, x, y):
        """c*x + y with constant c."""
        return self.apply("axpy", x, y, aux=float(c))

    def cmulv(self, a, cvec):
        return self.apply("cmulv", a, aux=np.asarray(cvec, dtype=np.float64))

    def matvec(self, W, x):
        return self.apply("matvec", W, x)

    def matvec_t(self, W, v):
        return self.apply("matvec_t", W, v)

    def affine(self, W, x, b):
        return self.apply("affine", W, x, b)

    def tanh(self, x):
        return self.apply("tanh", x)

    def dtanh_mul(self, a, u):
        """(1 - a^2) * u where a is a recorded tanh output."""
        return self.apply("dtanh_mul", a, u)

    def dot(self, a, b):
        return self.apply("dot", a, b)

    def sumsq(self, a):
        return self.apply("sumsq", a)

    def quadform(self, x, Q):
        return self.apply("quadform", x, aux=np.asarray(Q, dtype=np.float64))

    def concat(self, a, b):
        return self.apply("concat", a, b)

    def head(self, x, n: int):
        return self.apply("head", x, aux=int(n))

    def pad(self, x, m: int):
        return self.apply("pad", x, aux=int(m))

    def skew_from_vec(self, f, m: int):
        return self.apply("skew_from_vec", f, aux=int(m))

    def lowtri_from_vec(self, f, m: int):
        return self.apply("lowtri_from_vec", f, aux=int(m))

    def gram_eps(self, L, eps: float):
        return self.apply("gram_eps", L, aux=float(eps))

    def specnorm_uv(self, V, u, v):
        """u' V v with the near-singular pair (u, v) held constant."""
        return self.apply(
            "specnorm_uv",
            V,
            aux=(np.array(u, dtype=np.float64), np.array(v, dtype=np.float64)),
        )

    def scale_to(self, V, s, target: float):
        """V * (target / s): spectral rescaling toward a target norm."""
        return self.apply("scale_to", V, s, aux=float(target))

    def spring_force(self, d, kl, kn):
        return self.apply(
            "spring_force",
            d,
            aux=(np.asarray(kl, dtype=np.float64), np.asarray(kn, dtype=np.float64)),
        )

    def rk4_combine(self, y, k1, k2, k3, k4, h: float):
        return self.apply("rk4_combine", y, k1, k2, k3, k4, aux=float(h))

    def cayley(self, A):
        return self.apply("cayley", A)

    # -- replay & backward ---------------------------------------------------

    def replay_equal(self) -> bool:
        """Re-run every recorded op and compare against stored values bit-for-bit."""
        for node in self.nodes:
            if node.op is None:
                continue
            fwd = OPS[node.op][0]
            redone = fwd(tuple(p.value for p in node.parents), node.aux)
            stored = np.asarray(node.value)
            if not np.array_equal(stored, np.asarray(redone)):
                return False
        return True

    def backward(self, loss: Node) -> None:
        """Accumulate adjoints from ``loss`` into every reachable node."""
        if np.ndim(loss.value) != 0:
            raise ContractError(
                f"loss must be scalar, got shape {np.shape(loss.value)}"
            )
        loss.adj = np.float64(1.0)
        for node in reversed(self.nodes):
            g = node.adj
            if g is None or node.op is None:
                continue
            parent_grads = OPS[node.op][1](node, g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                if parent.adj is None:
                    parent.adj = pg
                else:
                    parent.adj = parent.adj + pg

    def _locate_nonfinite(self, loss: Node) -> int:
        """Re-run backward defensively and return the first offending op index."""
        for node in self.nodes:
            node.adj = None
        loss.adj = np.float64(1.0)
        for node in reversed(self.nodes):
            g = node.adj
            if g is None or node.op is None:
                continue
            parent_grads = OPS[node.op][1](node, g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                if not np.all(np.isfinite(pg)):
                    return node.index
                if parent.adj is None:
                    parent.adj = pg
                else:
                    parent.adj = parent.adj + pg
        return -1


def grad(tape: GradientTape, loss: Node) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss node with respect to every parameter slot.

    Raises ContractError when ``loss`` is not scalar and NumericError (with
    the offending op index) when a non-finite adjoint appears in backward.
    """
    for node in tape.nodes:
        node.adj = None
    tape.backward(loss)
    out = {}
    bad = False
    for name, node in tape.params.items():
        g = node.adj
        if g is None:
            g = np.zeros_like(node.value)
        else:
            g = np.asarray(g, dtype=np.float64)
            if not np.all(np.isfinite(g)):
                bad = True
        out[name] = g
    if bad:
        idx = tape._locate_nonfinite(loss)
        raise NumericError(
            f"non-finite adjoint encountered in backward pass (op index {idx})",
            op_index=idx,
        )
    return out
