"""Synthetic target distributions for the desk-scale tasks, with analytic
CDFs/PDFs where they exist and a mode-coverage scorer for the 2-D grids."""

from __future__ import annotations

import numpy as np
from scipy import stats


class LaplaceTarget:
    dimension = 1

    def __init__(self, loc=0.0, scale=2.0):
        self.loc = float(loc)
        self.scale = float(scale)

    def sample(self, n, rng):
        return rng.laplace(self.loc, self.scale, size=(n, 1))

    def cdf(self, x):
        return stats.laplace(self.loc, self.scale).cdf(x)

    def pdf(self, x):
        return stats.laplace(self.loc, self.scale).pdf(x)

    def describe(self):
        return {"tag": "laplace", "loc": self.loc, "scale": self.scale}


class GaussMixtureTarget:
    dimension = 1

    def __init__(self, weights=(0.3, 0.7), means=(-2.0, 2.0), stds=(1.0, 1.0)):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.means = np.asarray(means, dtype=np.float64)
        self.stds = np.asarray(stds, dtype=np.float64)
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")

    def sample(self, n, rng):
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        return (self.means[comp] + self.stds[comp] * rng.standard_normal(n)).reshape(n, 1)

    def cdf(self, x):
        x = np.asarray(x)
        return sum(w * stats.norm(m, s).cdf(x)
                   for w, m, s in zip(self.weights, self.means, self.stds))

    def pdf(self, x):
        x = np.asarray(x)
        return sum(w * stats.norm(m, s).pdf(x)
                   for w, m, s in zip(self.weights, self.means, self.stds))

    def describe(self):
        return {"tag": "gauss-mixture", "weights": self.weights.tolist(),
                "means": self.means.tolist(), "stds": self.stds.tolist()}


class Ring8Target:
    """Eight Gaussian blobs equally spaced on a circle."""
    dimension = 2
    n_modes = 8

    def __init__(self, radius=2.0, std=0.1):
        self.radius = float(radius)
        self.std = float(std)
        angles = 2 * np.pi * np.arange(8) / 8
        self.centers = self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)

    def sample(self, n, rng):
        comp = rng.integers(0, 8, size=n)
        return self.centers[comp] + self.std * rng.standard_normal((n, 2))

    def describe(self):
        return {"tag": "ring8", "radius": self.radius, "std": self.std}


class Grid25Target:
    """5x5 grid of Gaussian blobs."""
    dimension = 2
    n_modes = 25

    def __init__(self, spacing=2.0, std=0.05):
        self.spacing = float(spacing)
        self.std = float(std)
        axis = (np.arange(5) - 2) * self.spacing
        self.centers = np.array([[x, y] for x in axis for y in axis])

    def sample(self, n, rng):
        comp = rng.integers(0, 25, size=n)
        return self.centers[comp] + self.std * rng.standard_normal((n, 2))

    def describe(self):
        return {"tag": "grid25", "spacing": self.spacing, "std": self.std}


TARGET_TAGS = ("laplace", "mixture", "ring8", "grid25")


def make_target(tag):
    if tag == "laplace":
        return LaplaceTarget(0.0, 2.0)
    if tag == "mixture":
        return GaussMixtureTarget((0.3, 0.7), (-2.0, 2.0), (1.0, 1.0))
    if tag == "ring8":
        return Ring8Target()
    if tag == "grid25":
        return Grid25Target()
    raise ValueError(f"unknown target {tag!r}; choose from {TARGET_TAGS}")


def mode_coverage(samples, centers, std, min_frac=0.02):
    """Number of modes holding at least min_frac of the samples within three
    standard deviations of their center."""
    samples = np.asarray(samples)
    centers = np.asarray(centers)
    d2 = ((samples[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(d2, axis=1)
    within = np.sqrt(d2[np.arange(len(samples)), nearest]) <= 3.0 * std
    covered = 0
    for k in range(len(centers)):
        frac = np.mean((nearest == k) & within)
        if frac >= min_frac:
            covered += 1
    return covered
