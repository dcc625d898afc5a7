"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Each criterion is checked at its stated tolerance with its own independent
oracle (scipy statistics, LAPACK eigenvalues, analytic closed forms, or
finite differences), never through the code path under test alone. The heavy
training criteria run the shipped task defaults end to end and check their
wall-clock budgets.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import stats

from kernelnet.diffengine import Tape, backward
from kernelnet.kernel import (
    KernelConfig,
    form_equivalence_trial,
    kernel_eval,
    psd_audit,
)
from kernelnet.mmd import (
    ComposedKernel,
    mmd2,
    omega_regularizer,
    repulsive_loss,
    smmd_delta,
    smmd_sigma,
    vae_mmd_regularizer,
)
from kernelnet.nets import Mlp
from kernelnet.spectral import factorize_density, sample_dependent
from kernelnet.tasks import TrainSpec, train_sampler, train_toy_gan, two_sample_test
from kernelnet.targets import make_target


def report(name, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


# --------------------------------------------------------------- criterion 1

def test_criterion_1_psd_audits():
    t0 = time.time()
    sum_pass = 0
    worst_sum = 0.0
    for seed in range(20):
        cfg = KernelConfig.default(dim=2, variant="sum", n_features=8192,
                                   rng=np.random.default_rng(100 + seed))
        pts = np.random.default_rng(200 + seed).standard_normal((16, 2))
        audit = psd_audit(cfg, pts, n_features=8192,
                          rng=np.random.default_rng(300 + seed))
        worst_sum = min(worst_sum, audit.min_eigenvalue)
        if audit.min_eigenvalue >= -0.05:
            sum_pass += 1
    ind_pass = 0
    worst_ind = 0.0
    for seed in range(20):
        cfg = KernelConfig.default(dim=2, variant="independent-only",
                                   n_features=8192,
                                   rng=np.random.default_rng(400 + seed))
        pts = np.random.default_rng(500 + seed).standard_normal((16, 2))
        audit = psd_audit(cfg, pts, n_features=8192,
                          rng=np.random.default_rng(600 + seed))
        worst_ind = min(worst_ind, audit.min_eigenvalue)
        if audit.min_eigenvalue >= -1e-10:
            ind_pass += 1
    elapsed = time.time() - t0
    ok = sum_pass >= 19 and ind_pass == 20 and elapsed <= 120
    assert report(
        "criterion 1 (Gram positive definiteness)", ok,
        f"sum variant {sum_pass}/20 >= -0.05 (worst {worst_sum:.4f}); "
        f"shared-feature {ind_pass}/20 >= -1e-10 (worst {worst_ind:.2e}); "
        f"{elapsed:.0f}s <= 120s")


# --------------------------------------------------------------- criterion 2

def test_criterion_2_form_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(7)
    cfg = KernelConfig.default(dim=2, variant="sum", n_features=8192,
                               rng=np.random.default_rng(11))
    hits = 0
    for _ in range(100):
        z1 = rng.standard_normal(2)
        z2 = rng.standard_normal(2)
        trial = form_equivalence_trial(cfg, z1, z2, rng, n_features=8192)
        if abs(trial["form_a"] - trial["form_b"]) <= 3.0 * trial["se"]:
            hits += 1
    elapsed = time.time() - t0
    ok = hits >= 98 and elapsed <= 60
    assert report(
        "criterion 2 (two cosine forms agree)", ok,
        f"{hits}/100 pairs within 3 combined SE; {elapsed:.0f}s <= 60s")


# --------------------------------------------------------------- criterion 3

def test_criterion_3_rbf_recovery():
    t0 = time.time()
    rng = np.random.default_rng(13)
    n = 8192
    cfg = KernelConfig.identity_rbf(dim=2, n_features=n)
    worst = 0.0
    hits = 0
    for _ in range(100):
        z1 = rng.standard_normal(2)
        z2 = rng.standard_normal(2)
        val = float(kernel_eval(Tape(), cfg, z1, z2, rng).value)
        err = abs(val - np.exp(-np.sum((z1 - z2) ** 2) / 2.0))
        worst = max(worst, err)
        if err <= 4.0 / np.sqrt(n):
            hits += 1
    elapsed = time.time() - t0
    ok = hits == 100 and elapsed <= 60
    assert report(
        "criterion 3 (Gaussian RBF recovery)", ok,
        f"{hits}/100 pairs within 4/sqrt(N) (worst err {worst:.4f} vs "
        f"{4 / np.sqrt(n):.4f}); {elapsed:.0f}s <= 60s")


# --------------------------------------------------------------- criterion 4

def test_criterion_4_density_factorization():
    rng = np.random.default_rng(17)
    identity_ok = 0
    ks_ok = 0
    for i in range(100):
        t1 = Mlp([2, 6, 2], activation="tanh",
                  rng=np.random.default_rng(1000 + i))
        t2 = Mlp([2, 6, 2], activation="tanh",
                  rng=np.random.default_rng(2000 + i))
        z1 = rng.standard_normal(2)
        z2 = rng.standard_normal(2)
        fact = factorize_density(t1, t2, z1, z2)
        if abs(fact.density_inside() * fact.box_volume() - 1.0) <= 1e-12:
            identity_ok += 1
        draw = sample_dependent(Tape(), t1, t2, z1, z2, 10_000, rng)
        good = True
        for k in range(2):
            lo, hi = fact.support_lo[k], fact.support_hi[k]
            p = stats.kstest(draw.omegas.value[:, k],
                             stats.uniform(lo, hi - lo).cdf).pvalue
            if p < 0.01:
                good = False
        ks_ok += good
    ok = identity_ok == 100 and ks_ok >= 97
    assert report(
        "criterion 4 (density factorization)", ok,
        f"identity exact in {identity_ok}/100; per-dimension KS passed in "
        f"{ks_ok}/100 instances (>= 97 required)")


# --------------------------------------------------------------- criterion 5

def _grad_check(build, nets, tol=1e-4):
    """build() -> (tape, scalar node); frozen draws inside. Compares tape
    gradients to central finite differences for every parameter."""
    tape, root = build()
    grads = backward(root)
    worst = 0.0
    for net in nets:
        for p in net.params():
            node = tape.bound(p.value)
            ana = np.zeros(p.value.size) if node is None or node.id not in grads \
                else grads[node.id].reshape(-1)
            orig = p.value
            h = 1e-5
            num = np.zeros(orig.size)
            for i in range(orig.size):
                pert = orig.reshape(-1).copy()
                pert[i] += h
                p.value = pert.reshape(orig.shape)
                fp = float(build()[1].value)
                pert[i] -= 2 * h
                p.value = pert.reshape(orig.shape)
                fm = float(build()[1].value)
                num[i] = (fp - fm) / (2 * h)
                p.value = orig
            denom = max(np.max(np.abs(num)), np.max(np.abs(ana)), 1e-8)
            worst = max(worst, np.max(np.abs(ana - num)) / denom)
    return worst


def test_criterion_5_gradient_suite():
    t0 = time.time()
    worst_by_loss = {}
    for seed in range(3):
        data_rng = np.random.default_rng(50 + seed)
        X = data_rng.standard_normal((4, 2))
        Y = data_rng.standard_normal((3, 2)) + 0.3
        cfg = KernelConfig.default(dim=2, variant="sum", n_features=16,
                                   hidden=3,
                                   rng=np.random.default_rng(60 + seed))
        critic = Mlp([2, 4, 2], activation="tanh",
                     rng=np.random.default_rng(70 + seed))
        kernel = ComposedKernel(cfg=cfg, h=critic)
        plain = ComposedKernel(cfg=cfg, h=None)
        nets_k = cfg.nets()
        nets_kh = nets_k + [critic]
        draw = 900 + seed

        cases = {
            "mmd2-biased": (lambda: (lambda t: (t, mmd2(
                t, X, Y, kernel, "biased",
                np.random.default_rng(draw)).node))(Tape()), nets_kh),
            "mmd2-unbiased": (lambda: (lambda t: (t, mmd2(
                t, X, Y, kernel, "unbiased",
                np.random.default_rng(draw)).node))(Tape()), nets_kh),
            "omega": (lambda: (lambda t: (t, omega_regularizer(
                t, cfg, X, 3, np.random.default_rng(draw),
                pair_cap=4).node))(Tape()), nets_k),
            "smmd-sigma": (lambda: (lambda t: (t, smmd_sigma(
                t, 0.5, cfg, critic, X, np.random.default_rng(draw),
                n_mc=4).node))(Tape()), nets_kh),
            "smmd-delta": (lambda: (lambda t: (t, smmd_delta(
                t, 2.0, cfg, critic, X, np.random.default_rng(draw),
                n_mc=4).node))(Tape()), nets_kh),
            "repulsive": (lambda: (lambda t: (t, repulsive_loss(
                t, 0.5, X, Y, kernel,
                np.random.default_rng(draw))))(Tape()), nets_kh),
            "vae-mmd": (lambda: (lambda t: (t, vae_mmd_regularizer(
                t, [X[:2], X[2:]], X, plain,
                np.random.default_rng(draw))))(Tape()), nets_k),
        }
        for name, (build, nets) in cases.items():
            worst = _grad_check(build, nets)
            worst_by_loss[name] = max(worst_by_loss.get(name, 0.0), worst)
    elapsed = time.time() - t0
    ok = all(w <= 1e-4 for w in worst_by_loss.values()) and elapsed <= 300
    detail = ", ".join(f"{k}={v:.2e}" for k, v in worst_by_loss.items())
    assert report(
        "criterion 5 (gradient suite vs finite differences)", ok,
        f"worst relative errors over 3 seeds: {detail}; "
        f"{elapsed:.0f}s <= 300s")


# --------------------------------------------------------------- criterion 6

def test_criterion_6_eta_reduction_500_steps(tmp_path):
    common = dict(total_gen_steps=500, batch_size=8, n_features=32,
                  alpha1=0.1, alpha2=0.1, critic_steps_per_gen=1,
                  adam_beta2=0.999, critic_out_dim=2, omega_pairs=4,
                  sn_scale=1.0, lr_kernel_ratio=0.01,
                  omega_mc=2, snapshot_every=0, seed=21, kernel_hidden=4,
                  critic_hidden=8, generator_hidden=8, final_sample_count=500)
    a = tmp_path / "std"
    b = tmp_path / "rep"
    train_toy_gan(TrainSpec.for_objective("mmd-dk", **common), a)
    train_toy_gan(TrainSpec.for_objective("rep-dk", eta=-1.0, **common), b)
    same_metrics = (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    same_samples = (a / "samples.csv").read_bytes() == (b / "samples.csv").read_bytes()
    ok = same_metrics and same_samples
    assert report(
        "criterion 6 (eta = -1 reduction, 500 steps)", ok,
        f"metrics byte-identical: {same_metrics}; "
        f"final samples byte-identical: {same_samples}")


# --------------------------------------------------------------- criterion 7

def test_criterion_7_sampler_tasks(tmp_path):
    # Laplace(0, 2)
    t0 = time.time()
    spec = TrainSpec.for_objective("sampler", target="laplace", seed=0)
    train_sampler(spec, tmp_path / "laplace")
    laplace_elapsed = time.time() - t0
    draws = np.genfromtxt(tmp_path / "laplace" / "samples.csv",
                          delimiter=",", names=True)["x0"]
    ks = stats.kstest(draws, stats.laplace(0.0, 2.0).cdf).statistic
    ok_laplace = (ks <= 0.05 and spec.total_gen_steps <= 20_000
                  and laplace_elapsed <= 900)

    # two-component Gaussian mixture
    t0 = time.time()
    spec_m = TrainSpec.for_objective("sampler", target="mixture", seed=0)
    train_sampler(spec_m, tmp_path / "mixture")
    mixture_elapsed = time.time() - t0
    draws_m = np.genfromtxt(tmp_path / "mixture" / "samples.csv",
                            delimiter=",", names=True)["x0"]
    left_mass = float(np.mean(draws_m < 0.0))
    ok_mixture = (abs(left_mass - 0.308) <= 0.05 and mixture_elapsed <= 900)

    ok = ok_laplace and ok_mixture
    assert report(
        "criterion 7 (sampler learning)", ok,
        f"Laplace KS {ks:.4f} <= 0.05 in {spec.total_gen_steps} steps "
        f"({laplace_elapsed:.0f}s <= 900s); mixture left mass {left_mass:.3f} "
        f"in 0.308 +/- 0.05 ({mixture_elapsed:.0f}s <= 900s)")


# --------------------------------------------------------------- criterion 8

def _coverage_oracle(samples, centers, std):
    """Independent scorer: a mode counts as covered when at least 2% of the
    samples land within three standard deviations of its center."""
    covered = 0
    for c in centers:
        dist = np.sqrt(((samples - c) ** 2).sum(axis=1))
        if np.mean(dist <= 3.0 * std) >= 0.02:
            covered += 1
    return covered


def test_criterion_8_ring8_mode_coverage(tmp_path):
    t0 = time.time()
    target = make_target("ring8")
    coverages = []
    for seed in range(3):
        spec = TrainSpec.for_objective("rep-dk", target="ring8", seed=seed)
        train_toy_gan(spec, tmp_path / f"seed{seed}")
        rows = np.genfromtxt(tmp_path / f"seed{seed}" / "samples.csv",
                             delimiter=",", names=True)
        samples = np.vstack([rows["x0"], rows["x1"]]).T
        coverages.append(_coverage_oracle(samples, target.centers, target.std))
    elapsed = time.time() - t0
    good = sum(c >= 7 for c in coverages)
    ok = good >= 2 and elapsed <= 2700 and spec.total_gen_steps <= 20_000
    assert report(
        "criterion 8 (ring mode coverage)", ok,
        f"coverage per seed {coverages} (>=7/8 in {good}/3 seeds, need 2); "
        f"{spec.total_gen_steps} steps; {elapsed:.0f}s <= 2700s")


# --------------------------------------------------------------- criterion 9

def test_criterion_9_two_sample_power_and_level():
    spec = TrainSpec.for_objective("two-sample")
    rejections = 0
    for rep in range(20):
        rng = np.random.default_rng(3000 + rep)
        X = rng.standard_normal((200, 1))
        Y = rng.laplace(0.0, 1.0 / np.sqrt(2.0), size=(200, 1))
        res = two_sample_test(X, Y, spec, np.random.default_rng(rep))
        rejections += res["p_value"] <= 0.05
    null_rejections = 0
    for rep in range(50):
        rng = np.random.default_rng(5000 + rep)
        X = rng.standard_normal((200, 1))
        Y = rng.standard_normal((200, 1))
        res = two_sample_test(X, Y, spec, np.random.default_rng(100 + rep))
        null_rejections += res["p_value"] <= 0.05
    ok = rejections >= 16 and null_rejections <= 5
    assert report(
        "criterion 9 (two-sample power and level)", ok,
        f"Gaussian-vs-Laplace rejected {rejections}/20 (need >= 16); "
        f"null rejected {null_rejections}/50 (allowed <= 5)")


# -------------------------------------------------------------- criterion 10

def test_criterion_10_cli_determinism(tmp_path):
    args = ["kernelnet", "train", "--objective", "sampler", "--target",
            "laplace", "--steps", "40", "--seed", "12", "--no-figures",
            "-o", "batch_size=16", "-o", "kernel.n_features=64",
            "-o", "final_samples=200", "-o", "omega.pairs=4", "-o", "omega.mc=2"]
    a = tmp_path / "a"
    b = tmp_path / "b"
    r1 = subprocess.run(args + ["--output-dir", str(a)], capture_output=True)
    r2 = subprocess.run(args + ["--output-dir", str(b)], capture_output=True)
    same = (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    ok = r1.returncode == 0 and r2.returncode == 0 and same
    assert report(
        "criterion 10 (CLI determinism)", ok,
        f"exit codes {r1.returncode}/{r2.returncode}; metrics.csv "
        f"byte-identical: {same}")
