"""Neural building blocks whose defining properties hold by construction.

Four structural guarantees are needed by the controller:

  * ``LipschitzMlp``     -- end-to-end Lipschitz bound <= beta, enforced by
                            the reparameterization W_i = t * V_i / |V_i|_2
                            with t = beta**(1/D),
  * ``BiLipNet``         -- invertible residual stack y = alpha*x + g(x)
                            with Lip(g) <= beta < alpha, certified constants
                            mu = s*prod(alpha_i - beta_i),
                            nu = s*prod(alpha_i + beta_i),
  * ``PlnetHamiltonian`` -- H(x) = 0.5*|G(x)|^2 with G bi-Lipschitz and
                            G(0) = 0, hence H(x) >= 0.5*gamma^2*|x|^2 and
                            the gradient-domination inequality
                            0.5*|grad H|^2 >= gamma^2 * H,
  * ``SkewHead``/``SpdHead`` -- matrix-valued nets with J = -J' exact and
                            R = R' >= eps*I by assembly.

Certified constants are only ever computed from exact SVDs of the weights
the forward pass actually uses; the power-iteration estimates that appear
inside the normalization are treated as part of the executed function, not
as a certificate.

Raw (numpy) evaluation methods accept batched inputs with shape (..., d).
Traced evaluation (``bind``) records single-vector computations on a
GradientTape for training.
"""

from __future__ import annotations

import numpy as np

from .errors import CertificationError, ContractError
from .linalg import SpectralNormState, power_vectors
from .tape import GradientTape, Node

__all__ = [
    "LipschitzMlp",
    "UnconstrainedMlp",
    "BiLipNet",
    "PlnetHamiltonian",
    "SkewHead",
    "SpdHead",
    "bilip_forward",
    "bilip_constants",
    "plnet_value",
    "plnet_grad",
    "skew_head_eval",
    "spd_head_eval",
]


def _orthogonalish(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Random matrix with unit spectral norm (orthonormal rows or columns).

    Contiguous so that callers may treat parameter arrays as flat views.
    """
    g = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, _ = np.linalg.qr(g)
    return np.ascontiguousarray(q if rows >= cols else q.T)


class LipschitzMlp:
    """Dense tanh MLP with end-to-end Lipschitz constant <= beta.

    Weight layer i is executed as t * V_i / sigma_hat(V_i) with
    t = beta**(1/D); sigma_hat is a warm-started power-iteration estimate
    refreshed explicitly via ``refresh`` (never inside forward), so the
    executed function is frozen between refreshes.
    """

    def __init__(self, dims: list[int], beta: float, rng: np.random.Generator):
        if len(dims) < 2:
            raise ContractError("LipschitzMlp needs at least one weight layer")
        if beta <= 0:
            raise ContractError("beta must be positive")
        self.dims = list(dims)
        self.beta = float(beta)
        self.depth = len(dims) - 1
        self.target = self.beta ** (1.0 / self.depth)
        self.V = [
            _orthogonalish(rng, dims[i + 1], dims[i]) for i in range(self.depth)
        ]
        self.b = [np.zeros(dims[i + 1]) for i in range(self.depth)]
        self._states = [SpectralNormState() for _ in range(self.depth)]
        self._u = [None] * self.depth
        self._v = [None] * self.depth
        self._sigma = [None] * self.depth
        self._Weff = [None] * self.depth
        self.refresh(iters=100)

    # -- normalization -------------------------------------------------------

    def refresh(self, iters: int = 20) -> None:
        """Re-estimate spectral norms and rebuild the executed weights."""
        for i, V in enumerate(self.V):
            u, v, sigma = power_vectors(V, iters=iters, state=self._states[i])
            self._u[i], self._v[i], self._sigma[i] = u, v, float(sigma)
            self._Weff[i] = V * (self.target / self._sigma[i])

    def recompute_effective(self) -> None:
        """Rebuild executed weights with the normalization pair held frozen.

        Keeps the executed function a smooth map of the raw parameters, which
        finite-difference gradient checks rely on.
        """
        for i, V in enumerate(self.V):
            self._sigma[i] = float(self._u[i] @ V @ self._v[i])
            self._Weff[i] = V * (self.target / self._sigma[i])

    def effective_weights(self) -> list[np.ndarray]:
        return list(self._Weff)

    def lipschitz_certified(self) -> float:
        """Product of exact spectral norms of the executed weights."""
        out = 1.0
        for W in self._Weff:
            out *= float(np.linalg.svd(W, compute_uv=False)[0])
        return out

    # -- raw evaluation ------------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = x
        for i in range(self.depth - 1):
            h = np.tanh(h @ self._Weff[i].T + self.b[i])
        return h @ self._Weff[-1].T + self.b[-1]

    def forward_with_acts(self, x: np.ndarray):
        acts = []
        h = x
        for i in range(self.depth - 1):
            h = np.tanh(h @ self._Weff[i].T + self.b[i])
            acts.append(h)
        return h @ self._Weff[-1].T + self.b[-1], acts

    def vjp(self, acts, v: np.ndarray) -> np.ndarray:
        """Transposed-Jacobian product at the point ``acts`` was recorded."""
        u = v @ self._Weff[-1]
        for i in range(self.depth - 2, -1, -1):
            u = (1.0 - acts[i] * acts[i]) * u
            u = u @ self._Weff[i]
        return u

    # -- parameters & tracing -------------------------------------------------

    def param_items(self, prefix: str):
        for i in range(self.depth):
            yield f"{prefix}.V{i}", self.V[i]
        for i in range(self.depth):
            yield f"{prefix}.b{i}", self.b[i]

    def state_items(self, prefix: str):
        for i in range(self.depth):
            yield f"{prefix}.pi_u{i}", self._u[i]
            yield f"{prefix}.pi_v{i}", self._v[i]

    def load_state(self, prefix: str, arrays: dict) -> None:
        """Restore the exact normalization pair so the executed function
        matches the checkpointed one bit-for-bit."""
        for i in range(self.depth):
            ku, kv = f"{prefix}.pi_u{i}", f"{prefix}.pi_v{i}"
            if ku in arrays and kv in arrays:
                u = np.asarray(arrays[ku], dtype=np.float64)
                v = np.asarray(arrays[kv], dtype=np.float64)
                self._u[i], self._v[i] = u, v
                self._states[i].v = v.copy()
                self._sigma[i] = float(u @ self.V[i] @ v)
                self._Weff[i] = self.V[i] * (self.target / self._sigma[i])

    def bind(self, tape: GradientTape, prefix: str) -> "BoundLipschitzMlp":
        return BoundLipschitzMlp(self, tape, prefix)


class BoundLipschitzMlp:
    """Tape-recorded view of a LipschitzMlp (per-rollout shared nodes)."""

    def __init__(self, mlp: LipschitzMlp, tape: GradientTape, prefix: str):
        self.mlp = mlp
        self.tape = tape
        self.W: list[Node] = []
        self.b: list[Node] = []
        for i in range(mlp.depth):
            Vn = tape.param(f"{prefix}.V{i}", mlp.V[i])
            sn = tape.specnorm_uv(Vn, mlp._u[i], mlp._v[i])
            self.W.append(tape.scale_to(Vn, sn, mlp.target))
            self.b.append(tape.param(f"{prefix}.b{i}", mlp.b[i]))

    def forward(self, x: Node):
        t = self.tape
        acts = []
        h = x
        for i in range(self.mlp.depth - 1):
            h = t.tanh(t.affine(self.W[i], h, self.b[i]))
            acts.append(h)
        return t.affine(self.W[-1], h, self.b[-1]), acts

    def vjp(self, acts, v: Node) -> Node:
        t = self.tape
        u = t.matvec_t(self.W[-1], v)
        for i in range(self.mlp.depth - 2, -1, -1):
            u = t.dtanh_mul(acts[i], u)
            u = t.matvec_t(self.W[i], u)
        return u


class UnconstrainedMlp:
    """Plain tanh MLP used for the feature networks of the matrix heads."""

    def __init__(
        self,
        dims: list[int],
        rng: np.random.Generator,
        out_gain: float = 0.1,
    ):
        self.dims = list(dims)
        self.depth = len(dims) - 1
        self.W = []
        self.b = [np.zeros(dims[i + 1]) for i in range(self.depth)]
        for i in range(self.depth):
            gain = out_gain if i == self.depth - 1 else 1.0
            self.W.append(
                rng.standard_normal((dims[i + 1], dims[i])) * (gain / np.sqrt(dims[i]))
            )

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = x
        for i in range(self.depth - 1):
            h = np.tanh(h @ self.W[i].T + self.b[i])
        return h @ self.W[-1].T + self.b[-1]

    def param_items(self, prefix: str):
        for i in range(self.depth):
            yield f"{prefix}.W{i}", self.W[i]
        for i in range(self.depth):
            yield f"{prefix}.b{i}", self.b[i]

    def bind(self, tape: GradientTape, prefix: str) -> "BoundUnconstrainedMlp":
        return BoundUnconstrainedMlp(self, tape, prefix)


class BoundUnconstrainedMlp:
    def __init__(self, mlp: UnconstrainedMlp, tape: GradientTape, prefix: str):
        self.mlp = mlp
        self.tape = tape
        self.W = [tape.param(f"{prefix}.W{i}", mlp.W[i]) for i in range(mlp.depth)]
        self.b = [tape.param(f"{prefix}.b{i}", mlp.b[i]) for i in range(mlp.depth)]

    def forward(self, x: Node) -> Node:
        t = self.tape
        h = x
        for i in range(self.mlp.depth - 1):
            h = t.tanh(t.affine(self.W[i], h, self.b[i]))
        return t.affine(self.W[-1], h, self.b[-1])


class _ResidualLayer:
    """y = alpha*x + g(x) with Lip(g) <= beta < alpha; beta = 0 drops g."""

    def __init__(
        self,
        dim: int,
        alpha: float,
        beta: float,
        width: int,
        mlp_depth: int,
        rng: np.random.Generator,
    ):
        if beta < 0 or beta >= alpha:
            raise ContractError("residual layer needs 0 <= beta < alpha")
        self.alpha = float(alpha)
        self.beta = float(beta)
        if beta == 0.0:
            self.g = None
        else:
            dims = [dim] + [width] * (mlp_depth - 1) + [dim]
            self.g = LipschitzMlp(dims, beta, rng)


class BiLipNet:
    """Certified bi-Lipschitz map: residual stack, optional Cayley-orthogonal
    layers, an output scale, and exact zero at the origin via offset
    subtraction.

    Certified constants (exact SVD): mu = scale*prod(alpha_i - beta_cert_i),
    nu = scale*prod(alpha_i + beta_cert_i).  The interleaved orthogonal
    layers are isometries and do not enter the constants.
    """

    def __init__(
        self,
        dim: int,
        n_layers: int = 2,
        alpha: float = 1.0,
        beta: float = 0.5,
        width: int = 32,
        mlp_depth: int = 2,
        scale: float = 1.0,
        orthogonal: bool = False,
        rng: np.random.Generator | None = None,
    ):
        if scale <= 0:
            raise ContractError("scale must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = int(dim)
        self.scale = float(scale)
        self.orthogonal = bool(orthogonal)
        self.layers = [
            _ResidualLayer(dim, alpha, beta, width, mlp_depth, rng)
            for _ in range(n_layers)
        ]
        # one skew parameter vector per layer, zero init -> Q = I
        self.skew = (
            [np.zeros(dim * (dim - 1) // 2) for _ in range(n_layers)]
            if orthogonal
            else []
        )
        self._offset = None
        self._certified: tuple[float, float] | None = None
        self.refresh()

    # -- maintenance ----------------------------------------------------------

    def set_scale(self, scale: float) -> None:
        if scale <= 0:
            raise ContractError("scale must be positive")
        self.scale = float(scale)
        self._certified = None
        self._offset = self._raw_forward(np.zeros(self.dim))

    def refresh(self, iters: int = 20) -> None:
        """Re-normalize weights and re-record the offset raw(0)."""
        for layer in self.layers:
            if layer.g is not None:
                layer.g.refresh(iters=iters)
        self._offset = self._raw_forward(np.zeros(self.dim))
        self._certified = None

    def recompute_effective(self) -> None:
        """Frozen-normalization rebuild (see LipschitzMlp.recompute_effective)."""
        for layer in self.layers:
            if layer.g is not None:
                layer.g.recompute_effective()
        self._offset = self._raw_forward(np.zeros(self.dim))
        self._certified = None

    def _q_matrices(self) -> list[np.ndarray]:
        if not self.orthogonal:
            return []
        out = []
        m = self.dim
        iu = np.triu_indices(m, k=1)
        for a in self.skew:
            A = np.zeros((m, m))
            A[iu] = a
            A = A - A.T
            eye = np.eye(m)
            out.append((eye - A) @ np.linalg.inv(eye + A))
        return out

    def certify(self) -> tuple[float, float]:
        """Exact-SVD certification of (mu, nu) for the executed weights."""
        mu = self.scale
        nu = self.scale
        for layer in self.layers:
            beta_cert = 0.0 if layer.g is None else layer.g.lipschitz_certified()
            if beta_cert >= layer.alpha:
                raise CertificationError(
                    f"certified residual gain {beta_cert:.6g} >= alpha {layer.alpha}"
                )
            mu *= layer.alpha - beta_cert
            nu *= layer.alpha + beta_cert
        self._certified = (mu, nu)
        return self._certified

    @property
    def certified(self) -> tuple[float, float]:
        if self._certified is None:
            return self.certify()
        return self._certified

    # -- raw evaluation --------------------------------------------------------

    def _raw_forward(self, x: np.ndarray) -> np.ndarray:
        h = x
        qs = self._q_matrices()
        for k, layer in enumerate(self.layers):
            if qs:
                h = h @ qs[k].T
            if layer.g is None:
                h = layer.alpha * h
            else:
                h = layer.alpha * h + layer.g.forward(h)
        return h

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ContractError(
                f"input dimension {x.shape[-1]} != net dimension {self.dim}"
            )
        return self.scale * (self._raw_forward(x) - self._offset)

    def forward_with_ctx(self, x: np.ndarray):
        """Forward pass keeping per-layer activations for ``vjp``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ContractError(
                f"input dimension {x.shape[-1]} != net dimension {self.dim}"
            )
        ctx = []
        qs = self._q_matrices()
        h = x
        for k, layer in enumerate(self.layers):
            if qs:
                h = h @ qs[k].T
            if layer.g is None:
                ctx.append(None)
                h = layer.alpha * h
            else:
                gy, acts = layer.g.forward_with_acts(h)
                ctx.append(acts)
                h = layer.alpha * h + gy
        return self.scale * (h - self._offset), ctx

    def vjp(self, ctx, v: np.ndarray) -> np.ndarray:
        """Jacobian-transpose product of the net (scale included)."""
        u = self.scale * v
        qs = self._q_matrices()
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if layer.g is None:
                u = layer.alpha * u
            else:
                u = layer.alpha * u + layer.g.vjp(ctx[k], u)
            if qs:
                u = u @ qs[k]
        return u

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Dense Jacobian at a single point, via one vjp per output row."""
        _, ctx = self.forward_with_ctx(x)
        rows = [self.vjp(ctx, e) for e in np.eye(self.dim)]
        return np.stack(rows, axis=0)

    # -- parameters & tracing ----------------------------------------------------

    def param_items(self, prefix: str):
        for i, layer in enumerate(self.layers):
            if layer.g is not None:
                yield from layer.g.param_items(f"{prefix}.layer{i}")
        for i, a in enumerate(self.skew):
            yield f"{prefix}.skew{i}", a

    def state_items(self, prefix: str):
        for i, layer in enumerate(self.layers):
            if layer.g is not None:
                yield from layer.g.state_items(f"{prefix}.layer{i}")

    def load_state(self, prefix: str, arrays: dict) -> None:
        for i, layer in enumerate(self.layers):
            if layer.g is not None:
                layer.g.load_state(f"{prefix}.layer{i}", arrays)
        self._offset = self._raw_forward(np.zeros(self.dim))
        self._certified = None

    def topology(self) -> dict:
        layer = self.layers[0]
        return {
            "dim": self.dim,
            "n_layers": len(self.layers),
            "alpha": layer.alpha,
            "beta": layer.beta,
            "width": (layer.g.dims[1] if layer.g is not None else 0),
            "mlp_depth": (layer.g.depth if layer.g is not None else 2),
            "scale": self.scale,
            "orthogonal": self.orthogonal,
        }

    def bind(self, tape: GradientTape, prefix: str) -> "BoundBiLipNet":
        return BoundBiLipNet(self, tape, prefix)


class BoundBiLipNet:
    """Tape-recorded view of a BiLipNet.

    The offset raw(0) is recorded once per tape and shared by every
    evaluation, so gradients flow through it.
    """

    def __init__(self, net: BiLipNet, tape: GradientTape, prefix: str):
        self.net = net
        self.tape = tape
        self.mlps: list[BoundLipschitzMlp | None] = []
        self.qnodes: list[Node] = []
        for i, layer in enumerate(net.layers):
            if net.orthogonal:
                an = tape.param(f"{prefix}.skew{i}", net.skew[i])
                self.qnodes.append(tape.cayley(tape.skew_from_vec(an, net.dim)))
            if layer.g is None:
                self.mlps.append(None)
            else:
                self.mlps.append(layer.g.bind(tape, f"{prefix}.layer{i}"))
        zero = tape.leaf(np.zeros(net.dim))
        self.offset, _ = self._raw_forward(zero)

    def _raw_forward(self, x: Node):
        t = self.tape
        ctx = []
        h = x
        for k, layer in enumerate(self.net.layers):
            if self.qnodes:
                h = t.matvec(self.qnodes[k], h)
            if self.mlps[k] is None:
                h = t.smul(h, layer.alpha)
                ctx.append(None)
            else:
                gy, acts = self.mlps[k].forward(h)
                ctx.append(acts)
                h = t.axpy(layer.alpha, h, gy)
        return h, ctx

    def forward(self, x: Node):
        t = self.tape
        raw, ctx = self._raw_forward(x)
        return t.smul(t.sub(raw, self.offset), self.net.scale), ctx

    def vjp(self, ctx, v: Node) -> Node:
        t = self.tape
        u = t.smul(v, self.net.scale)
        for k in range(len(self.net.layers) - 1, -1, -1):
            layer = self.net.layers[k]
            if self.mlps[k] is None:
                u = t.smul(u, layer.alpha)
            else:
                u = t.axpy(layer.alpha, u, self.mlps[k].vjp(ctx[k], u))
            if self.qnodes:
                u = t.matvec_t(self.qnodes[k], u)
        return u


class PlnetHamiltonian:
    """H(x) = 0.5*|G(x)|^2 for a bi-Lipschitz core G with G(0) = 0.

    gamma is the core's certified inverse-Lipschitz constant; the additive
    constant of the general construction is fixed to zero so that H(0) = 0.
    """

    def __init__(self, core: BiLipNet):
        self.core = core

    @property
    def dim(self) -> int:
        return self.core.dim

    @property
    def gamma(self) -> float:
        return self.core.certified[0]

    def value(self, x: np.ndarray) -> np.ndarray | float:
        y = self.core.forward(x)
        return 0.5 * np.sum(y * y, axis=-1)

    def grad(self, x: np.ndarray) -> np.ndarray:
        y, ctx = self.core.forward_with_ctx(x)
        return self.core.vjp(ctx, y)

    def value_and_grad(self, x: np.ndarray):
        y, ctx = self.core.forward_with_ctx(x)
        return 0.5 * np.sum(y * y, axis=-1), self.core.vjp(ctx, y)


class SkewHead:
    """J(x2, z) = A - A' with A strictly upper triangular from a feature net."""

    def __init__(
        self,
        m: int,
        l: int = 0,
        width: int = 32,
        depth: int = 2,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.m = int(m)
        self.l = int(l)
        self.n_feat = m * (m - 1) // 2
        dims = [m + l] + [width] * (depth - 1) + [self.n_feat]
        self.features = UnconstrainedMlp(dims, rng)

    def eval(self, x2: np.ndarray, z: np.ndarray | None = None) -> np.ndarray:
        x2 = np.asarray(x2, dtype=np.float64)
        f = self.features.forward(_head_input(x2, z, self.m, self.l))
        iu = np.triu_indices(self.m, k=1)
        A = np.zeros(f.shape[:-1] + (self.m, self.m))
        A[..., iu[0], iu[1]] = f
        return A - np.swapaxes(A, -1, -2)

    def param_items(self, prefix: str):
        yield from self.features.param_items(prefix)

    def bind(self, tape: GradientTape, prefix: str) -> "BoundMatrixHead":
        return BoundMatrixHead(self, tape, prefix, kind="skew")


class SpdHead:
    """R(x2, z) = L L' + eps*I with L lower triangular from a feature net."""

    def __init__(
        self,
        m: int,
        l: int = 0,
        eps: float = 0.1,
        width: int = 32,
        depth: int = 2,
        rng: np.random.Generator | None = None,
    ):
        if eps <= 0:
            raise ContractError("SpdHead floor eps must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.m = int(m)
        self.l = int(l)
        self.eps = float(eps)
        self.n_feat = m * (m + 1) // 2
        dims = [m + l] + [width] * (depth - 1) + [self.n_feat]
        self.features = UnconstrainedMlp(dims, rng)

    def eval(self, x2: np.ndarray, z: np.ndarray | None = None) -> np.ndarray:
        x2 = np.asarray(x2, dtype=np.float64)
        f = self.features.forward(_head_input(x2, z, self.m, self.l))
        il = np.tril_indices(self.m)
        L = np.zeros(f.shape[:-1] + (self.m, self.m))
        L[..., il[0], il[1]] = f
        out = L @ np.swapaxes(L, -1, -2)
        out[..., np.arange(self.m), np.arange(self.m)] += self.eps
        return out

    def param_items(self, prefix: str):
        yield from self.features.param_items(prefix)

    def bind(self, tape: GradientTape, prefix: str) -> "BoundMatrixHead":
        return BoundMatrixHead(self, tape, prefix, kind="spd")


class BoundMatrixHead:
    def __init__(self, head, tape: GradientTape, prefix: str, kind: str):
        self.head = head
        self.tape = tape
        self.kind = kind
        self.features = head.features.bind(tape, prefix)

    def eval(self, x2: Node, z: Node | None = None) -> Node:
        t = self.tape
        x = x2 if z is None else t.concat(x2, z)
        f = self.features.forward(x)
        if self.kind == "skew":
            return t.skew_from_vec(f, self.head.m)
        L = t.lowtri_from_vec(f, self.head.m)
        return t.gram_eps(L, self.head.eps)


def _head_input(x2, z, m, l):
    if x2.shape[-1] != m:
        raise ContractError(f"head input dimension {x2.shape[-1]} != m={m}")
    if l == 0:
        if z is not None and np.size(z) != 0:
            raise ContractError("head expects empty extra signal (l = 0)")
        return x2
    if z is None:
        raise ContractError(f"head expects extra signal of dimension {l}")
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != l:
        raise ContractError(f"extra signal dimension {z.shape[-1]} != l={l}")
    return np.concatenate((x2, np.broadcast_to(z, x2.shape[:-1] + (l,))), axis=-1)


# -- operation-style wrappers -------------------------------------------------


def bilip_forward(net: BiLipNet, x: np.ndarray) -> np.ndarray:
    """Evaluate the net; net(0) = 0 by construction."""
    return net.forward(x)


def bilip_constants(net: BiLipNet) -> tuple[float, float]:
    """Certified (mu, nu) from exact spectral norms of the executed weights."""
    return net.certify()


def plnet_value(H: PlnetHamiltonian, x: np.ndarray):
    return H.value(x)


def plnet_grad(H: PlnetHamiltonian, x: np.ndarray) -> np.ndarray:
    return H.grad(x)


def skew_head_eval(head: SkewHead, x2, z=None) -> np.ndarray:
    return head.eval(x2, z)


def spd_head_eval(head: SpdHead, x2, z=None) -> np.ndarray:
    return head.eval(x2, z)
