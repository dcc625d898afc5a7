"""Samplers for the kernel's spectral distributions.

Three constructions:
  - independent:      omega = g(eps), eps uniform[-1,1] or standard normal
  - dependent:        omega = mu + eps*sigma with mu = t1(z1)+t1(z2),
                      sigma = exp(t2(z1)+t2(z2)), eps uniform[-1,1]
  - dependent_v2:     concatenated-input variant, mu = t1([z1,z2])+t1([z2,z1]),
                      sigma likewise, eps standard normal

plus the closed-form factorization of the dependent per-dimension density
(a uniform law on [mu - sigma, mu + sigma]).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffengine import Tape, Node

# exp(t2(z1)+t2(z2)) is clamped here during sampling so an aggressively
# negative t2 cannot collapse the uniform law to zero width.
SIGMA_FLOOR = 1e-8


class NonFiniteSpectralError(RuntimeError):
    """A sampler produced non-finite scale values (overflowing exp).

    Usually means the spectral nets grew unchecked; enable or increase the
    moment regularizer weight, or lower sn_scale.
    """


class UnsupportedVariantError(ValueError):
    """Operation not defined for this sampler construction."""


@dataclass
class SpectralBatch:
    """One draw of spectral samples: omegas (N, d) node, phases (N,) in
    [0, 2*pi), and the base noise eps that generated the omegas."""
    omegas: Node
    phases: np.ndarray
    eps: np.ndarray
    law: str  # base-noise law actually used


def draw_phases(n, rng):
    return rng.uniform(0.0, 2.0 * np.pi, size=n)


def sample_independent(tape, g, n, rng, d_out=None, eps_law="uniform"):
    """Data-independent spectral batch: omegas = g(eps).

    g may be None for the identity map (omegas = eps directly), used by the
    fixed-kernel recovery checks. eps dimension equals g's input dim, or
    d_out when g is None.
    """
    if n < 1:
        raise ValueError("need at least one spectral sample")
    d_eps = g.in_dim if g is not None else int(d_out)
    if eps_law == "uniform":
        eps = rng.uniform(-1.0, 1.0, size=(n, d_eps))
    elif eps_law == "gaussian":
        eps = rng.standard_normal((n, d_eps))
    else:
        raise ValueError(f"unknown eps law {eps_law!r}")
    if g is None:
        omegas = tape.leaf(eps, name="omega_indep")
    else:
        omegas = g.forward(tape, tape.leaf(eps, name="eps_indep"))
    phases = draw_phases(n, rng)
    return SpectralBatch(omegas, phases, eps, eps_law)


def _mu_sigma(tape, t1, t2, z1, z2):
    if not isinstance(z1, Node):
        z1 = tape.leaf(z1, name="z1")
    if not isinstance(z2, Node):
        z2 = tape.leaf(z2, name="z2")
    mu = tape.add(t1.forward(tape, z1), t1.forward(tape, z2))
    log_sigma = tape.add(t2.forward(tape, z1), t2.forward(tape, z2))
    sigma = tape.clip_min(tape.exp(log_sigma), SIGMA_FLOOR)
    if not np.all(np.isfinite(sigma.value)):
        raise NonFiniteSpectralError(
            "dependent sampler: exp(t2(z1)+t2(z2)) overflowed; regularize the "
            "spectral moments or reduce sn_scale")
    return mu, sigma


def sample_dependent(tape, t1, t2, z1, z2, n, rng, eps=None):
    """Reparameterized data-dependent batch for the pair (z1, z2).

    omega = mu + eps*sigma with eps ~ uniform[-1,1]; symmetric in (z1, z2)
    by construction. Pass eps to freeze the base noise."""
    if n < 1:
        raise ValueError("need at least one spectral sample")
    mu, sigma = _mu_sigma(tape, t1, t2, z1, z2)
    d = t1.out_dim
    if eps is None:
        eps = rng.uniform(-1.0, 1.0, size=(n, d))
    omegas = tape.addrow(tape.mulrow(tape.leaf(eps, name="eps_dep"), sigma), mu)
    phases = draw_phases(n, rng)
    return SpectralBatch(omegas, phases, eps, "uniform")


def _mu_sigma_v2(tape, t1, t2, z1, z2):
    if not isinstance(z1, Node):
        z1 = tape.leaf(z1, name="z1")
    if not isinstance(z2, Node):
        z2 = tape.leaf(z2, name="z2")
    cat12 = tape.concat1d(z1, z2)
    cat21 = tape.concat1d(z2, z1)
    mu = tape.add(t1.forward(tape, cat12), t1.forward(tape, cat21))
    log_sigma = tape.add(t2.forward(tape, cat12), t2.forward(tape, cat21))
    sigma = tape.clip_min(tape.exp(log_sigma), SIGMA_FLOOR)
    if not np.all(np.isfinite(sigma.value)):
        raise NonFiniteSpectralError(
            "concatenated-input sampler: exp overflow in sigma; regularize the "
            "spectral moments or reduce sn_scale")
    return mu, sigma


def sample_dependent_v2(tape, t1, t2, z1, z2, n, rng, eps=None):
    """Concatenated-input variant: inputs [z1,z2] and [z2,z1] are summed over
    both orderings (symmetry), and the base noise is standard normal."""
    if n < 1:
        raise ValueError("need at least one spectral sample")
    d = t1.out_dim
    z_width = np.asarray(z1 if not isinstance(z1, Node) else z1.value).shape[0]
    if t1.in_dim != 2 * z_width:
        raise ValueError(
            f"variant-2 nets take concatenated pairs: in_dim {t1.in_dim} != 2*{z_width}")
    mu, sigma = _mu_sigma_v2(tape, t1, t2, z1, z2)
    if eps is None:
        eps = rng.standard_normal((n, d))
    omegas = tape.addrow(tape.mulrow(tape.leaf(eps, name="eps_dep2"), sigma), mu)
    phases = draw_phases(n, rng)
    return SpectralBatch(omegas, phases, eps, "gaussian")


@dataclass
class DensityFactorization:
    """Split of the dependent per-pair density p(omega|z1,z2) into
    r(omega) * s(omega,z1) * s(omega,z2), with the support box."""
    r_value: float
    s1_value: float
    s2_value: float
    support_lo: np.ndarray
    support_hi: np.ndarray

    def density_inside(self):
        """Value of r*s1*s2 (the uniform density inside the box)."""
        return self.r_value * self.s1_value * self.s2_value

    def box_volume(self):
        return float(np.prod(self.support_hi - self.support_lo))


def factorize_density(t1, t2, z1, z2, variant="dependent"):
    """Closed-form factorization of the dependent sampler's density.

    Per dimension the law is uniform on [mu_i - sigma_i, mu_i + sigma_i], so
    the joint density inside the box is prod_i 1/(2 sigma_i), which splits as
    r = 1 and s_k = prod_i 1/(sqrt(2) exp(t2_i(z_k))). Only the
    elementwise-reparameterized variant factorizes; the concatenated-input
    one does not.
    """
    if variant != "dependent":
        raise UnsupportedVariantError(
            f"density factorization is only defined for the 'dependent' "
            f"construction, not {variant!r}")
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    a1 = t2.forward_np(z1)
    a2 = t2.forward_np(z2)
    mu = t1.forward_np(z1) + t1.forward_np(z2)
    sigma = np.exp(a1 + a2)
    s1 = float(np.prod(1.0 / (np.sqrt(2.0) * np.exp(a1))))
    s2 = float(np.prod(1.0 / (np.sqrt(2.0) * np.exp(a2))))
    return DensityFactorization(
        r_value=1.0, s1_value=s1, s2_value=s2,
        support_lo=mu - sigma, support_hi=mu + sigma)
