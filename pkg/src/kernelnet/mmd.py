"""MMD-family statistics and the losses built on them.

Everything here evaluates on a tape and returns nodes, so gradients flow to
generator, critic, and spectral-net parameters alike. Pair means come from
one joint Gram per evaluation (shared eps/phase streams across pairs); the
critic objectives of the standard and repulsive adversarial games share one
code path (the eta-weighted pair means), which makes the eta = -1 reduction
of the repulsive loss to the plain-MMD game exact to the last bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffengine import Tape, Node
from .kernel import KernelConfig, kernel_gram
from .nets import Mlp
from .spectral import (
    SIGMA_FLOOR,
    sample_dependent,
    sample_dependent_v2,
    sample_independent,
)


@dataclass
class ComposedKernel:
    """Kernel on data space: spectral kernel after an optional critic map."""
    cfg: KernelConfig
    h: Mlp | None = None

    def features(self, tape, x, update_sn=True):
        if not isinstance(x, Node):
            x = tape.leaf(np.asarray(x, dtype=np.float64), name="points")
        if self.h is None:
            return x
        return self.h.forward(tape, x, update_sn=update_sn)

    def nets(self):
        out = self.cfg.nets()
        if self.h is not None:
            out.append(self.h)
        return out


@dataclass
class MmdEstimate:
    value: float
    estimator: str
    m: int
    n: int
    kernel_terms: tuple  # (E_PP, E_PQ, E_QQ)
    node: Node = field(repr=False, default=None)


def _block_masks(m, n, estimator):
    """Weight masks turning a joint (m+n) Gram into the three pair means."""
    b = m + n
    mpp = np.zeros((b, b))
    mqq = np.zeros((b, b))
    mpq = np.zeros((b, b))
    if estimator == "biased":
        mpp[:m, :m] = 1.0 / (m * m)
        mqq[m:, m:] = 1.0 / (n * n)
    elif estimator == "unbiased":
        if m < 2 or n < 2:
            raise ValueError("unbiased estimator needs at least 2 samples per set")
        mpp[:m, :m] = 1.0 / (m * (m - 1))
        mpp[np.arange(m), np.arange(m)] = 0.0
        mqq[m:, m:] = 1.0 / (n * (n - 1))
        mqq[np.arange(m, b), np.arange(m, b)] = 0.0
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    mpq[:m, m:] = 0.5 / (m * n)
    mpq[m:, :m] = 0.5 / (m * n)
    return mpp, mpq, mqq


def _terms_from_joint(tape, cfg, joint, m, n, estimator, rng, n_features):
    gram = kernel_gram(tape, cfg, joint, rng=rng, n_features=n_features)
    mpp, mpq, mqq = _block_masks(m, n, estimator)
    e_pp = tape.sum(tape.mul(gram, tape.leaf(mpp, name="mask_pp")))
    e_pq = tape.sum(tape.mul(gram, tape.leaf(mpq, name="mask_pq")))
    e_qq = tape.sum(tape.mul(gram, tape.leaf(mqq, name="mask_qq")))
    return e_pp, e_pq, e_qq


def pair_terms(tape, kernel, X, Y, rng=None, estimator="biased",
               n_features=None, update_sn=True):
    """E_PP, E_PQ, E_QQ as nodes from one shared-stream joint Gram."""
    zx = kernel.features(tape, X, update_sn=update_sn)
    zy = kernel.features(tape, Y, update_sn=False)
    m, n = zx.value.shape[0], zy.value.shape[0]
    if m < 1 or n < 1:
        raise ValueError("both sample sets must be non-empty")
    joint = tape.vconcat(zx, zy)
    e_pp, e_pq, e_qq = _terms_from_joint(
        tape, kernel.cfg, joint, m, n, estimator, rng, n_features)
    return e_pp, e_pq, e_qq, m, n


def mmd2(tape, X, Y, kernel, estimator="biased", rng=None, n_features=None,
         update_sn=True):
    """Squared MMD estimate between the rows of X and Y.

    biased: all pairs including diagonals (nonnegative). unbiased: within-set
    diagonals excluded (can dip below zero, mean-zero under P=Q).
    """
    e_pp, e_pq, e_qq, m, n = pair_terms(
        tape, kernel, X, Y, rng=rng, estimator=estimator,
        n_features=n_features, update_sn=update_sn)
    node = tape.add(tape.sub(e_pp, tape.scale(e_pq, 2.0)), e_qq)
    return MmdEstimate(
        value=float(node.value), estimator=estimator, m=m, n=n,
        kernel_terms=(float(e_pp.value), float(e_pq.value), float(e_qq.value)),
        node=node)


def eta_weighted_loss(tape, eta, e_pp, e_pq, e_qq):
    """eta*E_PP - E_QQ - (eta-1)*E_PQ; at eta = -1 this is exactly the
    negated biased squared MMD, and every adversarial critic objective in
    this package evaluates through here so that identity is bitwise."""
    return tape.sub(tape.sub(tape.scale(e_pp, eta), e_qq),
                    tape.scale(e_pq, eta - 1.0))


def repulsive_loss(tape, eta, X, Y, kernel, rng=None, n_features=None):
    """Pair-mean critic loss with re-weighted within-real term (biased
    means)."""
    e_pp, e_pq, e_qq, _, _ = pair_terms(
        tape, kernel, X, Y, rng=rng, estimator="biased", n_features=n_features)
    return eta_weighted_loss(tape, eta, e_pp, e_pq, e_qq)


# --------------------------------------------------------------- regularizer

@dataclass
class OmegaPenalty:
    """Moment and Jacobian penalties keeping the spectral laws tame: the
    squared-norm moments of both components plus the Frobenius norm of
    d omega/d z1 - d omega/d z2 for the data-dependent one."""
    indep_moment: float
    dep_moment: float
    jacobian_term: float
    total: float
    node: Node = field(repr=False, default=None)


def _select_row(tape, batch_node, i, d):
    sel = np.zeros((1, batch_node.value.shape[0]))
    sel[0, i] = 1.0
    return tape.reshape(tape.matmul(tape.leaf(sel, name="row_sel"), batch_node), (d,))


def _pair_indices(n_rows, cap):
    out = []
    for i in range(n_rows - 1):
        for j in range(i + 1, n_rows):
            out.append((i, j))
            if len(out) >= cap:
                return out
    return out


def omega_regularizer(tape, cfg, z_batch, n_mc, rng, pair_cap=64):
    """Monte Carlo estimate of the spectral-moment penalty over a batch.

    Pairs are the first pair_cap unordered pairs of the batch; base noise is
    frozen per pair (reparameterization), so the whole penalty is smooth in
    the net parameters. Jacobians of the spectral nets are built analytically
    on the tape (see Mlp.jacobian_node) to keep them differentiable.
    """
    if n_mc < 1:
        raise ValueError("need at least one Monte Carlo draw")
    if not isinstance(z_batch, Node):
        z_batch = tape.leaf(np.asarray(z_batch, dtype=np.float64), name="z_batch")
    d = z_batch.value.shape[1]

    zero = tape.leaf(np.asarray(0.0))
    indep_node = zero
    if cfg._has_independent():
        batch = sample_independent(tape, cfg.g, n_mc, rng, d_out=cfg.dim,
                                   eps_law=cfg.indep_eps_law)
        indep_node = tape.scale(tape.sumsq(batch.omegas), 1.0 / n_mc)

    dep_node = zero
    jac_node = zero
    if cfg._has_dependent():
        if z_batch.value.shape[0] < 2:
            raise ValueError("dependent penalty needs at least 2 batch rows")
        pairs = _pair_indices(z_batch.value.shape[0], pair_cap)
        rows, t1_out, t2_out, j1, j2 = {}, {}, {}, {}, {}
        dk2 = cfg.variant == "dk2-sum"
        if not dk2:
            for i in sorted({k for p in pairs for k in p}):
                rows[i] = _select_row(tape, z_batch, i, d)
                t1_out[i] = cfg.t1.forward(tape, rows[i])
                t2_out[i] = cfg.t2.forward(tape, rows[i])
                j1[i] = cfg.t1.jacobian_node(tape, rows[i])
                j2[i] = cfg.t2.jacobian_node(tape, rows[i])
        else:
            for i in sorted({k for p in pairs for k in p}):
                rows[i] = _select_row(tape, z_batch, i, d)
        # column selectors pull the z1/z2 halves out of concatenated-input
        # jacobians
        left = np.vstack([np.eye(d), np.zeros((d, d))])
        right = np.vstack([np.zeros((d, d)), np.eye(d)])
        left_n = tape.leaf(left, name="cols_left")
        right_n = tape.leaf(right, name="cols_right")

        dep_acc = None
        jac_acc = None
        for i, j in pairs:
            if not dk2:
                mu = tape.add(t1_out[i], t1_out[j])
                sigma = tape.clip_min(tape.exp(tape.add(t2_out[i], t2_out[j])),
                                      SIGMA_FLOOR)
                dj1 = tape.sub(j1[i], j1[j])
                dj2 = tape.sub(j2[i], j2[j])
                eps = rng.uniform(-1.0, 1.0, size=(n_mc, d))
            else:
                cat_ij = tape.concat1d(rows[i], rows[j])
                cat_ji = tape.concat1d(rows[j], rows[i])
                mu = tape.add(cfg.t1.forward(tape, cat_ij),
                              cfg.t1.forward(tape, cat_ji))
                sigma = tape.clip_min(
                    tape.exp(tape.add(cfg.t2.forward(tape, cat_ij),
                                      cfg.t2.forward(tape, cat_ji))), SIGMA_FLOOR)
                j1a = cfg.t1.jacobian_node(tape, cat_ij)
                j1b = cfg.t1.jacobian_node(tape, cat_ji)
                j2a = cfg.t2.jacobian_node(tape, cat_ij)
                j2b = cfg.t2.jacobian_node(tape, cat_ji)
                # d/dz1 picks left cols of [z1,z2] and right cols of [z2,z1]
                dj1 = tape.sub(
                    tape.add(tape.matmul(j1a, left_n), tape.matmul(j1b, right_n)),
                    tape.add(tape.matmul(j1a, right_n), tape.matmul(j1b, left_n)))
                dj2 = tape.sub(
                    tape.add(tape.matmul(j2a, left_n), tape.matmul(j2b, right_n)),
                    tape.add(tape.matmul(j2a, right_n), tape.matmul(j2b, left_n)))
                eps = rng.standard_normal((n_mc, d))

            omegas = tape.addrow(tape.mulrow(tape.leaf(eps, name="eps_pair"), sigma), mu)
            pair_moment = tape.scale(tape.sumsq(omegas), 1.0 / n_mc)
            dep_acc = pair_moment if dep_acc is None else tape.add(dep_acc, pair_moment)

            pair_jac = None
            for f in range(n_mc):
                es = tape.mul(tape.leaf(eps[f], name="eps_row"), sigma)
                diff = tape.add(dj1, tape.rowscale(dj2, es))
                fro = tape.sqrt(tape.sumsq(diff))
                pair_jac = fro if pair_jac is None else tape.add(pair_jac, fro)
            pair_jac = tape.scale(pair_jac, 1.0 / n_mc)
            jac_acc = pair_jac if jac_acc is None else tape.add(jac_acc, pair_jac)

        dep_node = tape.scale(dep_acc, 1.0 / len(pairs))
        jac_node = tape.scale(jac_acc, 1.0 / len(pairs))

    total = tape.add(tape.add(indep_node, dep_node), jac_node)
    return OmegaPenalty(
        indep_moment=float(indep_node.value), dep_moment=float(dep_node.value),
        jacobian_term=float(jac_node.value), total=float(total.value),
        node=total)


# ------------------------------------------------------------------ scalings

@dataclass
class SmmdScale:
    lambda_or_zeta: float
    grad_h_norm: float  # mean Frobenius norm of the critic Jacobian
    sigma_or_delta: float
    node: Node = field(repr=False, default=None)


def _moment_and_gradnorm_terms(tape, cfg, h, x_batch, rng, n_mc):
    """Per-sample E|omega_dep(z,z)|^2 * |grad h(x)|_F plus the independent
    moment and the mean critic-Jacobian norm, as nodes."""
    x_batch = np.asarray(x_batch, dtype=np.float64)
    n_x = x_batch.shape[0]
    indep_moment = tape.leaf(np.asarray(0.0))
    if cfg._has_independent():
        batch = sample_independent(tape, cfg.g, n_mc, rng, d_out=cfg.dim,
                                   eps_law=cfg.indep_eps_law)
        indep_moment = tape.scale(tape.sumsq(batch.omegas), 1.0 / n_mc)

    dep_term = None
    grad_norms = None
    for i in range(n_x):
        xi = tape.leaf(x_batch[i], name="x_i")
        jac = h.jacobian_node(tape, xi)
        gnorm = tape.sqrt(tape.sumsq(jac))
        grad_norms = gnorm if grad_norms is None else tape.add(grad_norms, gnorm)
        if cfg._has_dependent():
            z = h.forward(tape, xi)
            if cfg.variant == "dk2-sum":
                draw = sample_dependent_v2(tape, cfg.t1, cfg.t2, z, z, n_mc, rng)
            else:
                draw = sample_dependent(tape, cfg.t1, cfg.t2, z, z, n_mc, rng)
            moment = tape.scale(tape.sumsq(draw.omegas), 1.0 / n_mc)
            contrib = tape.mul(moment, gnorm)
            dep_term = contrib if dep_term is None else tape.add(dep_term, contrib)
    mean_grad = tape.scale(grad_norms, 1.0 / n_x)
    dep_mean = tape.scale(dep_term, 1.0 / n_x) if dep_term is not None \
        else tape.leaf(np.asarray(0.0))
    indep_term = tape.mul(indep_moment, mean_grad)
    return dep_mean, indep_term, mean_grad


def smmd_sigma(tape, lambda_, cfg, h, x_batch, rng, n_mc=64):
    """Scaling sigma = (lambda + 1 + E_x[E|w_dep(z,z)|^2 |grad h|_F]
    + E|w_ind|^2 E_x|grad h|_F)^(-1/2)."""
    if lambda_ < 0:
        raise ValueError("lambda must be nonnegative")
    dep_mean, indep_term, mean_grad = _moment_and_gradnorm_terms(
        tape, cfg, h, x_batch, rng, n_mc)
    braces = tape.add(tape.add(tape.leaf(np.asarray(lambda_ + 1.0)), dep_mean),
                      indep_term)
    node = tape.div(tape.leaf(np.asarray(1.0)), tape.sqrt(braces))
    return SmmdScale(lambda_or_zeta=float(lambda_),
                     grad_h_norm=float(mean_grad.value),
                     sigma_or_delta=float(node.value), node=node)


def smmd_delta(tape, zeta, cfg, h, x_batch, rng, n_mc=64):
    """Practical scaling delta = (1 + zeta * dep-term + ind-term)^(-1),
    always in (0, 1]."""
    if zeta < 0:
        raise ValueError("zeta must be nonnegative")
    dep_mean, indep_term, mean_grad = _moment_and_gradnorm_terms(
        tape, cfg, h, x_batch, rng, n_mc)
    braces = tape.add(tape.add(tape.leaf(np.asarray(1.0)),
                               tape.scale(dep_mean, zeta)), indep_term)
    node = tape.div(tape.leaf(np.asarray(1.0)), braces)
    return SmmdScale(lambda_or_zeta=float(zeta),
                     grad_h_norm=float(mean_grad.value),
                     sigma_or_delta=float(node.value), node=node)


# ----------------------------------------------------------------- gan losses

OBJECTIVES = ("mmd-dk", "smmd-dk", "rep-dk")


@dataclass
class GanLosses:
    generator_loss: Node
    critic_loss: Node
    mmd2: float
    omega: OmegaPenalty
    delta: float | None = None


def gan_losses(tape, objective, kernel, x_real, x_fake, rng, alpha1=0.0,
               alpha2=0.1, eta=1.0, zeta=1.0, n_features=None, omega_mc=4,
               omega_pairs=16, smmd_mc=32):
    """Generator and critic objectives for one batch pair.

    The critic term always evaluates through the eta-weighted pair means:
    the standard game is eta = -1 (identically the negated squared MMD), the
    repulsive game uses the caller's eta. smmd-dk rescales the squared MMD by
    the practical delta factor computed on the real batch.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    zx = kernel.features(tape, x_real, update_sn=True)
    zy = kernel.features(tape, x_fake, update_sn=False)
    m, n = zx.value.shape[0], zy.value.shape[0]
    z_joint = tape.vconcat(zx, zy)
    e_pp, e_pq, e_qq = _terms_from_joint(
        tape, kernel.cfg, z_joint, m, n, "biased", rng, n_features)
    mmd2_node = tape.add(tape.sub(e_pp, tape.scale(e_pq, 2.0)), e_qq)

    delta_node = None
    if objective == "smmd-dk":
        if kernel.h is None:
            raise ValueError("smmd-dk needs a critic (the scaling couples "
                             "spectral moments to the critic Jacobian)")
        scale = smmd_delta(tape, zeta, kernel.cfg, kernel.h,
                           np.asarray(x_real, dtype=np.float64), rng,
                           n_mc=smmd_mc)
        delta_node = scale.node
        gen_obj = tape.mul(delta_node, mmd2_node)
        critic_obj = tape.neg(gen_obj)
    else:
        gen_obj = mmd2_node
        critic_eta = -1.0 if objective == "mmd-dk" else eta
        critic_obj = eta_weighted_loss(tape, critic_eta, e_pp, e_pq, e_qq)

    omega = omega_regularizer(tape, kernel.cfg, z_joint, omega_mc, rng,
                              pair_cap=omega_pairs)

    gen_loss = gen_obj if alpha1 == 0.0 else \
        tape.add(gen_obj, tape.scale(omega.node, alpha1))
    critic_loss = critic_obj if alpha2 == 0.0 else \
        tape.add(critic_obj, tape.scale(omega.node, alpha2))
    return GanLosses(
        generator_loss=gen_loss, critic_loss=critic_loss,
        mmd2=float(mmd2_node.value), omega=omega,
        delta=None if delta_node is None else float(delta_node.value))


# ---------------------------------------------------------- vae mmd regular.

def vae_mmd_regularizer(tape, per_x_batches, pooled, kernel, rng=None,
                        n_features=None):
    """Mean over observations of the biased squared MMD between each
    observation's latent samples and the pooled latent batch."""
    if len(per_x_batches) == 0:
        raise ValueError("need at least one per-observation latent set")
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.shape[0] < 1:
        raise ValueError("pooled latent set is empty")
    acc = None
    for zs in per_x_batches:
        zs = np.asarray(zs, dtype=np.float64)
        if zs.shape[0] < 2:
            raise ValueError("each per-observation set needs >= 2 samples")
        est = mmd2(tape, zs, pooled, kernel, estimator="biased", rng=rng,
                   n_features=n_features)
        acc = est.node if acc is None else tape.add(acc, est.node)
    return tape.scale(acc, 1.0 / len(per_x_batches))
