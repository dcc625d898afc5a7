"""Random-feature kernel evaluation: single pairs, Gram matrices, critic
composition, and positive-definiteness audits.

Two evaluation paths exist on purpose. kernel_eval builds one pair through
the spectral samplers op by op (the readable reference). kernel_gram
evaluates all pairs of a batch at once; the data-dependent component runs as
a single fused tape operation whose forward and backward are hand-vectorized
(each pair conditions its own spectral law, so the Gram costs
O(batch^2 * n_features) no matter what — the fused op keeps the constant
factor workable on one core). The two paths agree to float-roundoff and the
test suite holds them to that.

Shared-stream convention: one eps/phase draw per component is reused by
every pair of a Gram evaluation (and by both cosine factors of each pair).
Audits record this convention rather than assuming it is canonical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .diffengine import Tape, Node
from .eigensolve import min_eigenvalue
from .nets import Mlp
from .spectral import (
    SIGMA_FLOOR,
    draw_phases,
    sample_dependent,
    sample_dependent_v2,
    sample_independent,
)

VARIANTS = ("independent-only", "dependent-only", "sum", "dk2-sum")

# Gram tolerance scale: tol = c / sqrt(n_features). Calibrated so the default
# audit at n_features=8192 enforces a 0.05 floor (see the audit tests).
DEFAULT_PSD_C = 4.53
EXACT_PSD_TOLERANCE = 1e-8  # shared-feature Gram is F F^T up to roundoff

# Per-factor floor on exp(t2(z)); squares to the sampler's SIGMA_FLOOR so the
# factorized pairwise scale stays clamped identically.
FACTOR_FLOOR = 1e-4


class NonFiniteKernelError(RuntimeError):
    def __init__(self, component):
        self.component = component
        super().__init__(
            f"kernel evaluation produced non-finite values in the "
            f"{component} component")


@dataclass
class KernelConfig:
    """Which spectral constructions make up the kernel and how to draw them.

    variant 'sum' adds the data-independent and data-dependent components;
    'dk2-sum' swaps in the concatenated-input dependent construction. g=None
    means the identity spectral map (omega = eps), which recovers fixed
    shift-invariant kernels such as the Gaussian RBF under gaussian eps.
    """
    variant: str
    dim: int
    g: Mlp | None = None
    t1: Mlp | None = None
    t2: Mlp | None = None
    n_features: int = 1024
    phase_sharing: bool = True
    seed_policy: int | None = None  # None: fresh draws from the caller's rng
    indep_eps_law: str = "uniform"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if not self.phase_sharing:
            raise ValueError(
                "phase sharing between the two cosine factors is what makes "
                "the estimator unbiased; it cannot be disabled")
        if self.indep_eps_law not in ("uniform", "gaussian"):
            raise ValueError(f"unknown eps law {self.indep_eps_law!r}")
        if self._has_dependent():
            if self.t1 is None or self.t2 is None:
                raise ValueError(f"variant {self.variant!r} needs t1 and t2")
            want = 2 * self.dim if self.variant == "dk2-sum" else self.dim
            if self.t1.in_dim != want or self.t2.in_dim != want:
                raise ValueError(
                    f"variant {self.variant!r} needs spectral nets with "
                    f"input dim {want}")
            if self.t1.out_dim != self.dim or self.t2.out_dim != self.dim:
                raise ValueError("spectral nets must output the kernel dim")
        if self._has_independent() and self.g is not None:
            if self.g.out_dim != self.dim:
                raise ValueError("g must output the kernel dim")

    def _has_independent(self):
        return self.variant in ("independent-only", "sum", "dk2-sum")

    def _has_dependent(self):
        return self.variant in ("dependent-only", "sum", "dk2-sum")

    def n_components(self):
        return int(self._has_independent()) + int(self._has_dependent())

    def rng_for_eval(self, rng):
        """Fixed seed policy re-derives the same stream on every call."""
        if self.seed_policy is not None:
            return np.random.default_rng(self.seed_policy)
        if rng is None:
            raise ValueError(
                "fresh-draw evaluation needs an rng (or set seed_policy)")
        return rng

    def nets(self):
        out = []
        for net in (self.g, self.t1, self.t2):
            if net is not None:
                out.append(net)
        return out

    def params(self):
        out = []
        for net in self.nets():
            out.extend(net.params())
        return out

    @classmethod
    def default(cls, dim, variant="sum", n_features=1024, hidden=16,
                eps_law="uniform", seed=None, rng=None, dep_output_scale=0.1):
        """Fresh tanh spectral nets in the shape used by the training tasks.

        t1/t2 output layers start scaled down so the data-dependent law
        begins close to a fixed uniform spectral measure: the construction's
        positive definiteness is an expectation-level property that degrades
        when mu/sigma vary strongly across a batch, so a near-stationary
        start keeps fresh-net Gram audits well inside tolerance while leaving
        the nets free to grow during training."""
        rng = rng or np.random.default_rng(seed)
        t_in = 2 * dim if variant == "dk2-sum" else dim
        g = t1 = t2 = None
        if variant in ("independent-only", "sum", "dk2-sum"):
            g = Mlp([dim, hidden, hidden, dim], activation="tanh", rng=rng)
        if variant in ("dependent-only", "sum", "dk2-sum"):
            t1 = Mlp([t_in, hidden, hidden, dim], activation="tanh", rng=rng,
                     output_scale=dep_output_scale)
            t2 = Mlp([t_in, hidden, hidden, dim], activation="tanh", rng=rng,
                     output_scale=dep_output_scale)
        return cls(variant=variant, dim=dim, g=g, t1=t1, t2=t2,
                   n_features=n_features, indep_eps_law=eps_law)

    @classmethod
    def identity_rbf(cls, dim, n_features=1024):
        """Identity spectral map with gaussian base noise: recovers the unit
        Gaussian RBF exp(-|z1-z2|^2/2) in expectation. Fixed, non-learned."""
        return cls(variant="independent-only", dim=dim, g=None,
                   n_features=n_features, indep_eps_law="gaussian")


# --------------------------------------------------------------- single pairs

def _as_z_node(tape, z, name):
    if isinstance(z, Node):
        return z
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {z.shape}")
    return tape.leaf(z, name=name)


def _pair_cos_term(tape, batch, z1, z2):
    """(2/N) sum_i cos(w_i . z1 + b_i) cos(w_i . z2 + b_i), phases shared."""
    b = tape.leaf(batch.phases, name="phases")
    c1 = tape.cos(tape.add(tape.matmul(batch.omegas, z1), b))
    c2 = tape.cos(tape.add(tape.matmul(batch.omegas, z2), b))
    return tape.scale(tape.mean(tape.mul(c1, c2)), 2.0)


def _pair_cos_diff_term(tape, batch, z1, z2):
    """(1/N) sum_i cos(w_i . (z1 - z2)): the phase-free form."""
    return tape.mean(tape.cos(tape.matmul(batch.omegas, tape.sub(z1, z2))))


def _component_batches(tape, cfg, z1, z2, rng, n_features):
    batches = []
    if cfg._has_independent():
        batches.append(("independent", sample_independent(
            tape, cfg.g, n_features, rng, d_out=cfg.dim,
            eps_law=cfg.indep_eps_law)))
    if cfg.variant in ("dependent-only", "sum"):
        batches.append(("dependent", sample_dependent(
            tape, cfg.t1, cfg.t2, z1, z2, n_features, rng)))
    elif cfg.variant == "dk2-sum":
        batches.append(("dependent", sample_dependent_v2(
            tape, cfg.t1, cfg.t2, z1, z2, n_features, rng)))
    return batches


def kernel_eval(tape, cfg, z1, z2, rng=None, n_features=None):
    """Monte Carlo kernel value for one pair; differentiable w.r.t. z1, z2
    and every net parameter. Reference (per-pair) evaluation path."""
    rng = cfg.rng_for_eval(rng)
    n = n_features or cfg.n_features
    z1 = _as_z_node(tape, z1, "z1")
    z2 = _as_z_node(tape, z2, "z2")
    total = None
    for name, batch in _component_batches(tape, cfg, z1, z2, rng, n):
        term = _pair_cos_term(tape, batch, z1, z2)
        if not np.isfinite(term.value):
            raise NonFiniteKernelError(name)
        total = term if total is None else tape.add(total, term)
    return total


def kernel_eval_form_a(tape, cfg, z1, z2, rng=None, n_features=None):
    """Phase-free form of the same kernel: mean cos(w . (z1 - z2))."""
    rng = cfg.rng_for_eval(rng)
    n = n_features or cfg.n_features
    z1 = _as_z_node(tape, z1, "z1")
    z2 = _as_z_node(tape, z2, "z2")
    total = None
    for name, batch in _component_batches(tape, cfg, z1, z2, rng, n):
        term = _pair_cos_diff_term(tape, batch, z1, z2)
        if not np.isfinite(term.value):
            raise NonFiniteKernelError(name)
        total = term if total is None else tape.add(total, term)
    return total


def composed_kernel_eval(tape, cfg, h, x1, x2, rng=None, n_features=None):
    """Kernel evaluated on critic features: kappa(h(x1), h(x2))."""
    z1 = h.forward(tape, _as_z_node(tape, x1, "x1"))
    z2 = h.forward(tape, _as_z_node(tape, x2, "x2"))
    return kernel_eval(tape, cfg, z1, z2, rng=rng, n_features=n_features)


def form_equivalence_trial(cfg, z1, z2, rng, n_features=None):
    """Paired estimate of the two cosine forms with their combined Monte
    Carlo standard error (sample std of summands / sqrt(N), added in
    quadrature). Fresh draws per form."""
    n = n_features or cfg.n_features
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)

    def summands(form):
        tape = Tape()
        out = np.zeros(n)
        for name, batch in _component_batches(
                tape, cfg, tape.leaf(z1), tape.leaf(z2), rng, n):
            w = batch.omegas.value
            if form == "b":
                out += 2.0 * np.cos(w @ z1 + batch.phases) * np.cos(w @ z2 + batch.phases)
            else:
                out += np.cos(w @ (z1 - z2))
        return out

    sa = summands("a")
    sb = summands("b")
    se = float(np.sqrt(sa.var(ddof=1) / n + sb.var(ddof=1) / n))
    return {"form_a": float(sa.mean()), "form_b": float(sb.mean()), "se": se}


# ------------------------------------------------------------ fused gram ops

def _dep_gram_fused(tape, t1_out, t2_out, z, eps, phases):
    """Data-dependent component of the Gram over one batch, one node.

    For rows z_i, z_j of the batch and shared draws (eps_f, b_f):
      omega_ijf = (T1_i + T1_j) + eps_f * exp(T2_i + T2_j)
      G_ij = (2/N) sum_f cos(omega_ijf . z_i + b_f) cos(omega_ijf . z_j + b_f)

    exp(T2) is clamped per factor at FACTOR_FLOOR (squares to the sampler's
    scale floor). Matches the per-pair reference path to roundoff.
    """
    T1, T2, Z = t1_out.value, t2_out.value, z.value
    B, d = Z.shape
    N = eps.shape[0]
    W = np.exp(T2)
    mask = W > FACTOR_FLOOR
    Wc = np.where(mask, W, FACTOR_FLOOR)
    if not np.all(np.isfinite(Wc)):
        raise NonFiniteKernelError("dependent")
    U = Wc * Z
    R = Z @ T1.T
    A = np.diag(R)[:, None] + R
    X = (Wc[:, None, :] * eps[None, :, :]).transpose(2, 0, 1).reshape(d, B * N)
    theta = (U @ X).reshape(B, B, N)
    theta += A[:, :, None]
    theta += phases[None, None, :]
    C = np.cos(theta)
    G = np.einsum("ijf,jif->ij", C, C) * (2.0 / N)
    if not np.all(np.isfinite(G)):
        raise NonFiniteKernelError("dependent")

    def vjp(dG):
        H = (2.0 / N) * (dG + dG.T)
        dTheta = np.sin(theta)
        np.negative(dTheta, out=dTheta)
        dTheta *= C.transpose(1, 0, 2)
        dTheta *= H[:, :, None]
        dA = dTheta.sum(axis=2)
        dR = dA.copy()
        dR[np.arange(B), np.arange(B)] += dA.sum(axis=1)
        dZ = dR @ T1
        dT1 = dR.T @ Z
        dS2 = dTheta.reshape(B, B * N)
        dU = dS2 @ X.T
        dX = U.T @ dS2
        dX3 = dX.reshape(d, B, N).transpose(1, 2, 0)
        dWc = (dX3 * eps[None, :, :]).sum(axis=1) + dU * Z
        dZ += dU * Wc
        dT2 = dWc * W * mask
        return (dT1, dT2, dZ)

    return tape.record("dep_gram", [t1_out, t2_out, z], G, vjp)


def _dk2_gram_fused(tape, mu_sum, logsig_sum, z, eps, phases):
    """Concatenated-input dependent component of the Gram.

    mu_sum and logsig_sum are (B*B, d) pairwise tables already symmetrized
    over the two input orderings; eps is standard normal."""
    B, d = z.value.shape
    N = eps.shape[0]
    Mu = mu_sum.value.reshape(B, B, d)
    L = logsig_sum.value.reshape(B, B, d)
    E = np.exp(L)
    mask = E > SIGMA_FLOOR
    Ec = np.where(mask, E, SIGMA_FLOOR)
    if not np.all(np.isfinite(Ec)):
        raise NonFiniteKernelError("dependent")
    Z = z.value
    A = np.einsum("ijk,ik->ij", Mu, Z)
    F = Ec * Z[:, None, :]
    theta = (F.reshape(B * B, d) @ eps.T).reshape(B, B, N)
    theta += A[:, :, None]
    theta += phases[None, None, :]
    C = np.cos(theta)
    G = np.einsum("ijf,jif->ij", C, C) * (2.0 / N)
    if not np.all(np.isfinite(G)):
        raise NonFiniteKernelError("dependent")

    def vjp(dG):
        H = (2.0 / N) * (dG + dG.T)
        dTheta = np.sin(theta)
        np.negative(dTheta, out=dTheta)
        dTheta *= C.transpose(1, 0, 2)
        dTheta *= H[:, :, None]
        dA = dTheta.sum(axis=2)
        dMu = np.einsum("ij,ik->ijk", dA, Z)
        dZ = np.einsum("ij,ijk->ik", dA, Mu)
        dF = (dTheta.reshape(B * B, N) @ eps).reshape(B, B, d)
        dEc = dF * Z[:, None, :]
        dZ += np.einsum("ijk->ik", dF * Ec)
        dL = dEc * E * mask
        return (dMu.reshape(B * B, d), dL.reshape(B * B, d), dZ)

    return tape.record("dk2_gram", [mu_sum, logsig_sum, z], G, vjp)


def kernel_gram(tape, cfg, z, rng=None, n_features=None):
    """Gram of the configured kernel over a batch (B,d): entry (i,j) equals
    the pairwise kernel under one shared eps/phase stream per component.
    Differentiable w.r.t. the batch and all net parameters."""
    rng = cfg.rng_for_eval(rng)
    n = n_features or cfg.n_features
    if not isinstance(z, Node):
        z = tape.leaf(np.asarray(z, dtype=np.float64), name="gram_points")
    if z.value.ndim != 2:
        raise ValueError(f"gram needs a (B,d) batch, got {z.value.shape}")
    total = None
    if cfg._has_independent():
        batch = sample_independent(tape, cfg.g, n, rng, d_out=cfg.dim,
                                   eps_law=cfg.indep_eps_law)
        proj = tape.addrow(tape.matmul(z, tape.transpose(batch.omegas)),
                           tape.leaf(batch.phases, name="phases"))
        C = tape.cos(proj)
        term = tape.scale(tape.matmul(C, tape.transpose(C)), 2.0 / n)
        if not np.all(np.isfinite(term.value)):
            raise NonFiniteKernelError("independent")
        total = term
    if cfg.variant in ("dependent-only", "sum"):
        t1_out = cfg.t1.forward(tape, z)
        t2_out = cfg.t2.forward(tape, z)
        eps = rng.uniform(-1.0, 1.0, size=(n, cfg.dim))
        phases = draw_phases(n, rng)
        term = _dep_gram_fused(tape, t1_out, t2_out, z, eps, phases)
        total = term if total is None else tape.add(total, term)
    elif cfg.variant == "dk2-sum":
        pairs = tape.pair_concat(z)
        mu_sum = tape.pair_sym_add(cfg.t1.forward(tape, pairs), z.value.shape[0])
        logsig_sum = tape.pair_sym_add(cfg.t2.forward(tape, pairs), z.value.shape[0])
        eps = rng.standard_normal((n, cfg.dim))
        phases = draw_phases(n, rng)
        term = _dk2_gram_fused(tape, mu_sum, logsig_sum, z, eps, phases)
        total = term if total is None else tape.add(total, term)
    return total


def gram_matrix(tape, cfg, points, rng=None, n_features=None):
    """Symmetrized Gram over m >= 2 points."""
    pts = points.value if isinstance(points, Node) else np.asarray(points)
    if pts.shape[0] < 2:
        raise ValueError("gram_matrix needs at least 2 points")
    g = kernel_gram(tape, cfg, points, rng=rng, n_features=n_features)
    return tape.scale(tape.add(g, tape.transpose(g)), 0.5)


# -------------------------------------------------------------------- audits

@dataclass
class GramAudit:
    """Result of a positive-definiteness audit of one Gram draw."""
    variant: str
    gram: np.ndarray
    min_eigenvalue: float
    n_points: int
    n_features_used: int
    tolerance: float
    c_value: float | None
    passed: bool
    shared_streams: bool = True  # eps/phase stream shared across pairs

    def to_report(self):
        return {
            "variant": self.variant,
            "n_points": self.n_points,
            "n_features": self.n_features_used,
            "min_eig": self.min_eigenvalue,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "shared_streams": self.shared_streams,
        }

    def to_json(self):
        return json.dumps(self.to_report(), indent=2, sort_keys=True)


def psd_audit(cfg, points, n_features=None, rng=None, tolerance=None):
    """Gram eigenvalue audit at n_features >= 256.

    The data-independent shared-feature Gram is an explicit feature-map Gram
    and must be PSD to roundoff; the data-dependent constructions are PSD in
    expectation, so the tolerance scales as c / sqrt(n_features).
    """
    n = n_features or cfg.n_features
    if n < 256:
        raise ValueError(f"audit needs n_features >= 256, got {n}")
    points = np.asarray(points, dtype=np.float64)
    tape = Tape()
    gram = gram_matrix(tape, cfg, points, rng=rng, n_features=n).value
    min_eig = min_eigenvalue(gram)
    c_value = None
    if tolerance is None:
        if cfg.variant == "independent-only":
            tolerance = EXACT_PSD_TOLERANCE
        else:
            c_value = DEFAULT_PSD_C
            tolerance = c_value / np.sqrt(n)
    return GramAudit(
        variant=cfg.variant, gram=gram, min_eigenvalue=min_eig,
        n_points=points.shape[0], n_features_used=n,
        tolerance=float(tolerance), c_value=c_value,
        passed=bool(min_eig >= -tolerance))
