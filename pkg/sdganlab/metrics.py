#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Evaluation of generators: Fréchet distances, mode coverage, the variation
across training checkpoints and the joint ranking by SD loss and
discriminator score.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from sdganlab.datasets import sample_data
from sdganlab.exceptions import ShapeError
from sdganlab.losses import per_sample_sd
from sdganlab.networks import forward_numpy

# added to the diagonal of sample covariances
COV_SHRINKAGE = 1e-6
# eigenvalues down to this are clamped to 0, below it is an error
EIG_TOLERANCE = 1e-10
SYMMETRY_TOLERANCE = 1e-12


@dataclass
class GaussianFit:
    """
    Mean and covariance of a gaussian.

    The covariance is symmetrized, and small negative eigenvalues
    (>= -1e-10) are clamped to 0.

    Attributes
    ----------
    mean : ndarray
        Shape (d, ).
    cov : ndarray
        Shape (d, d), symmetric positive semi-definite.

    """
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        d = len(self.mean)
        if self.mean.ndim != 1 or self.cov.shape != (d, d):
            raise ShapeError("Mean of shape {} and covariance of shape {} do "
                             "not conform".format(self.mean.shape, self.cov.shape))
        asym = np.max(np.abs(self.cov - self.cov.T))
        if asym > SYMMETRY_TOLERANCE * max(1., np.max(np.abs(self.cov))):
            raise ValueError("Covariance is not symmetric (max deviation "
                             "{})".format(asym))
        cov = (self.cov + self.cov.T) / 2.
        eigvals, eigvecs = scipy.linalg.eigh(cov)
        if eigvals[0] < -EIG_TOLERANCE:
            raise ValueError("Covariance is not positive semi-definite, "
                             "smallest eigenvalue {}".format(eigvals[0]))
        if eigvals[0] < 0:
            cov = (eigvecs * np.clip(eigvals, 0, None)) @ eigvecs.T
        self.cov = cov

    @property
    def dim(self):
        return len(self.mean)

    @classmethod
    def from_samples(cls, samples, shrinkage=COV_SHRINKAGE):
        """
        Fit a gaussian to samples of shape (n, d), with shrinkage * I
        added to the sample covariance.

        """
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim != 2 or len(x) < 2:
            raise ValueError("Need at least 2 samples of shape (n, d), got "
                             "shape {}".format(x.shape))
        n, d = x.shape
        if n < d + 1:
            warnings.warn("Fitting a gaussian in {} dimensions to {} samples, "
                          "the covariance is only regularized by the "
                          "shrinkage".format(d, n))
        cov = np.atleast_2d(np.cov(x, rowvar=False)) + shrinkage * np.eye(d)
        if scipy.linalg.eigvalsh((cov + cov.T) / 2.)[0] <= 0:
            raise ValueError("Degenerate covariance of {} samples in {} "
                             "dimensions, shrinkage {}".format(n, d, shrinkage))
        return cls(x.mean(axis=0), cov)

    def __eq__(self, other):
        return np.array_equal(self.mean, other.mean) and \
            np.array_equal(self.cov, other.cov)


def sqrt_psd(matrix):
    """ Square root of a symmetric psd matrix via its eigendecomposition. """
    eigvals, eigvecs = scipy.linalg.eigh((matrix + matrix.T) / 2.)
    return (eigvecs * np.sqrt(np.clip(eigvals, 0, None))) @ eigvecs.T


def frechet_distance(a, b):
    """
    Squared Fréchet (2-Wasserstein) distance of two gaussians.

    d^2 = |m_a - m_b|^2 + Tr(C_a + C_b - 2 (C_a C_b)^(1/2))

    The trace of the matrix square root is computed from the eigenvalues of
    the symmetric matrix C_a^(1/2) C_b C_a^(1/2), which has the same
    spectrum as C_a C_b.

    Parameters
    ----------
    a, b : GaussianFit

    Returns
    -------
    float
        >= 0, and exactly 0 for identical fits.

    """
    if a.dim != b.dim:
        raise ShapeError("Can not compare gaussians of dimension {} and "
                         "{}".format(a.dim, b.dim))
    if a == b:
        return 0.
    diff = a.mean - b.mean
    root_a = sqrt_psd(a.cov)
    product = root_a @ b.cov @ root_a
    eigvals = scipy.linalg.eigvalsh((product + product.T) / 2.)
    if eigvals[0] < -EIG_TOLERANCE * max(1., eigvals[-1]):
        raise ValueError("Product of covariances is not positive "
                         "semi-definite, eigenvalue {}".format(eigvals[0]))
    tr_covmean = np.sum(np.sqrt(np.clip(eigvals, 0, None)))
    dist = diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2 * tr_covmean
    return float(max(dist, 0.))


def random_feature_frechet(samples_a, samples_b, feature_net,
                           shrinkage=COV_SHRINKAGE):
    """
    Fréchet distance of two sample sets in the space of a frozen random
    network.

    Parameters
    ----------
    samples_a, samples_b : ndarray
        Shape (n, 2) each.
    feature_net : sdganlab.networks.MlpParams
        Frozen embedding.
    shrinkage : float
        Added to the diagonal of both covariances.

    Returns
    -------
    float

    """
    if not feature_net.frozen:
        raise ValueError("random_feature_frechet needs a frozen feature net")
    fit_a = GaussianFit.from_samples(forward_numpy(feature_net, samples_a),
                                     shrinkage)
    fit_b = GaussianFit.from_samples(forward_numpy(feature_net, samples_b),
                                     shrinkage)
    return frechet_distance(fit_a, fit_b)


def mode_coverage(samples, data_spec, threshold_std=3.):
    """
    How many modes of the data are covered, and how precisely.

    A sample is of high quality if it is closer than threshold_std *
    mode_std to some mode mean.

    Returns
    -------
    modes_hit : int
        Number of modes that own at least one high quality sample.
    high_quality_fraction : float

    """
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) == 0:
        return 0, 0.
    means = data_spec.mode_means()
    dists = np.linalg.norm(samples[:, None, :] - means[None, :, :], axis=-1)
    nearest = np.argmin(dists, axis=1)
    good = dists[np.arange(len(samples)), nearest] <= \
        threshold_std * data_spec.mode_std
    return int(len(np.unique(nearest[good]))), float(np.mean(good))


@dataclass
class CheckpointSeries:
    """
    Outputs of the generator on a fixed set of latents, at several
    checkpoints of a training.

    Attributes
    ----------
    latents : ndarray
        Shape (n, latent_dim), the same for every checkpoint.
    outputs : List
        One array of shape (n, 2) per checkpoint.
    fractions : tuple
        Fraction of the training at which each checkpoint was taken,
        strictly increasing.

    """
    latents: np.ndarray
    outputs: list
    fractions: tuple = (0.2, 0.4, 0.6, 0.8, 1.)

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        if len(self.outputs) != len(self.fractions):
            raise ValueError("Got {} checkpoint outputs for {} fractions".format(
                len(self.outputs), len(self.fractions)))
        if np.any(np.diff(self.fractions) <= 0):
            raise ValueError("Checkpoint fractions not strictly increasing: "
                             "{}".format(self.fractions))
        for i, out in enumerate(self.outputs):
            if out.shape != self.outputs[0].shape or \
                    len(out) != len(self.latents):
                raise ShapeError("Checkpoint {} has outputs of shape {}, "
                                 "expected {}".format(i, out.shape,
                                                      self.outputs[0].shape))

    @classmethod
    def from_snapshots(cls, snapshots, latents, fractions):
        """ Evaluate snapshots of the generator (MlpParams) on latents. """
        for snapshot in snapshots[1:]:
            snapshots[0].check_congruent(snapshot)
        return cls(latents, [forward_numpy(s, latents) for s in snapshots],
                   fractions)

    def append(self, output, fraction):
        """ Add the outputs of the next checkpoint. """
        self.outputs.append(np.asarray(output, dtype=np.float64))
        self.fractions = self.fractions + (float(fraction), )
        self.__post_init__()


def _distance(a, b, distance, feature_net):
    if distance == "l2":
        return np.sum((a - b) ** 2, axis=1)
    elif distance == "l1":
        return np.sum(np.abs(a - b), axis=1)
    elif distance == "feature":
        if feature_net is None:
            raise ValueError("Feature distance needs a feature net")
        diff = forward_numpy(feature_net, a) - forward_numpy(feature_net, b)
        return np.mean(diff ** 2, axis=1)
    else:
        raise ValueError("Unknown distance {}, must be l1, l2 or "
                         "feature".format(distance))


def trajectory_variance(series, distance="feature", feature_net=None):
    """
    Variation of the outputs of fixed latents across training checkpoints.

    For every latent, the distance between the outputs of consecutive
    checkpoints is averaged over the checkpoint pairs.

    Parameters
    ----------
    series : CheckpointSeries
        At least 2 checkpoints.
    distance : str
        l2 (squared euclidean), l1 or feature (mean squared difference of
        the feature net embeddings).
    feature_net : sdganlab.networks.MlpParams, optional
        Required for the feature distance.

    Returns
    -------
    mean, std : float
        Over the latents.

    """
    if len(series.outputs) < 2:
        raise ValueError("trajectory_variance needs at least 2 checkpoints, "
                         "got {}".format(len(series.outputs)))
    per_pair = [_distance(a, b, distance, feature_net)
                for a, b in zip(series.outputs[:-1], series.outputs[1:])]
    per_latent = np.mean(per_pair, axis=0)
    return float(np.mean(per_latent)), float(np.std(per_latent))


RANK_GROUPS = ("high_sd_high_d", "high_sd_low_d", "low_sd_high_d",
               "low_sd_low_d")


@dataclass
class RankReport:
    """
    Samples of the EMA generator ranked by SD distance and D score.

    Attributes
    ----------
    latents : ndarray
        Shape (n, latent_dim).
    outputs : ndarray
        Outputs of the EMA generator, shape (n, 2).
    sd_distance : ndarray
        Per sample SD distance between generator and EMA generator.
    d_score : ndarray
        Discriminator logit of the EMA generator output.
    sd_high, sd_low : ndarray
        Indices of the k samples with the highest and the lowest SD distance.
    groups : dict
        For every tag in RANK_GROUPS, the indices of its samples.

    """
    latents: np.ndarray
    outputs: np.ndarray
    sd_distance: np.ndarray
    d_score: np.ndarray
    sd_high: np.ndarray
    sd_low: np.ndarray
    groups: dict = field(default_factory=dict)

    def tags(self):
        """ Group tag of every sample, "n/a" for samples in no group. """
        tags = np.full(len(self.sd_distance), "n/a", dtype=object)
        for tag, indices in self.groups.items():
            tags[indices] = tag
        return tags

    def selected_rows(self):
        """ (index, sd_distance, d_score, tag, x, y) of the grouped samples. """
        rows = []
        for tag in RANK_GROUPS:
            for i in self.groups[tag]:
                rows.append((int(i), self.sd_distance[i], self.d_score[i], tag,
                             self.outputs[i, 0], self.outputs[i, 1]))
        return rows


def _split_by_score(indices, scores, k_inner):
    order = indices[np.argsort(scores[indices], kind="stable")]
    return order[::-1][:k_inner], order[:k_inner]


def rank_joint_extremes(gen, ema_shadow, disc, n_latents, k, spec, rng,
                        k_inner=None):
    """
    Select the extremes of the joint distribution of SD distance and D score.

    First the k samples with the highest and the k with the lowest SD
    distance are selected, then within each of them the k_inner samples
    with the highest and the lowest D score.

    Parameters
    ----------
    gen : MlpParams
        The generator.
    ema_shadow : MlpParams
        The EMA generator.
    disc : MlpParams
        The discriminator.
    n_latents : int
        Number of latents to draw, >= 4 * k.
    k : int
    spec : sdganlab.losses.SdLossSpec
        Distance kind; augmentation is not used.
    rng : sdganlab.rng.Rng
        For the latents.
    k_inner : int, optional
        Defaults to max(1, k // 2), must be <= max(1, k // 2). For k = 1
        the high and low D score groups hold the same sample.

    Returns
    -------
    RankReport

    """
    if k < 1 or n_latents < 4 * k:
        raise ValueError("Need n_latents >= 4 * k and k >= 1, got n_latents "
                         "{} and k {}".format(n_latents, k))
    if k_inner is None:
        k_inner = max(1, k // 2)
    if not 1 <= k_inner <= max(1, k // 2):
        raise ValueError("k_inner must be in [1, max(1, k // 2)], got "
                         "{}".format(k_inner))
    gen.check_congruent(ema_shadow)

    latents = rng.normal((n_latents, gen.input_dim))
    outputs = forward_numpy(ema_shadow, latents)
    sd_distance = per_sample_sd(forward_numpy(gen, latents), outputs, spec)
    d_score = forward_numpy(disc, outputs)[:, 0]

    by_sd = np.argsort(sd_distance, kind="stable")
    sd_low, sd_high = by_sd[:k], by_sd[::-1][:k]
    groups = {}
    groups["high_sd_high_d"], groups["high_sd_low_d"] = _split_by_score(
        sd_high, d_score, k_inner)
    groups["low_sd_high_d"], groups["low_sd_low_d"] = _split_by_score(
        sd_low, d_score, k_inner)
    return RankReport(latents, outputs, sd_distance, d_score, sd_high, sd_low,
                      groups)


def evaluate_generator(gen, data_spec, feature_net, rng, n_samples,
                       threshold_std=3.):
    """
    Metrics of one generator against fresh real samples.

    Returns
    -------
    dict
        frechet_data, frechet_feature, modes_hit, hq_fraction.

    """
    real = sample_data(data_spec, rng, n_samples)
    fake = forward_numpy(gen, rng.normal((n_samples, gen.input_dim)))
    if not np.all(np.isfinite(fake)):
        nan = float("nan")
        return {"frechet_data": nan, "frechet_feature": nan,
                "modes_hit": 0, "hq_fraction": nan}
    modes_hit, hq_fraction = mode_coverage(fake, data_spec, threshold_std)
    return {
        "frechet_data": frechet_distance(GaussianFit.from_samples(real),
                                         GaussianFit.from_samples(fake)),
        "frechet_feature": random_feature_frechet(real, fake, feature_net),
        "modes_hit": modes_hit,
        "hq_fraction": hq_fraction,
    }
