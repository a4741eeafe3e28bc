#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Adversarial and self-distillation losses.
"""

from dataclasses import dataclass

import numpy as np

import sdganlab.tensor as T
from sdganlab.exceptions import ConfigError, ShapeError
from sdganlab.networks import MlpParams, forward_mlp, forward_numpy

SD_KINDS = ("l1", "l2", "feature")

# probability of each transform, and how many of them are considered per batch
AUGMENT_PROB = 0.5
RANDOM_APPLY = 2
MAX_ROTATION_DEG = 5.
MAX_TRANSLATION = 0.01


@dataclass
class SdLossSpec:
    """
    How the distance between the generator and its EMA copy is measured.

    Attributes
    ----------
    kind : str
        l1, l2 or feature.
    alpha : float
        Weight of the loss in the generator objective, >= 0.
    feature_net : MlpParams or None
        Frozen embedding network, required iff kind is feature.
    augment : bool
        Apply the same random transform to both outputs first.
    data_scale : float
        Size of the data distribution, scales the translations.

    """
    kind: str = "feature"
    alpha: float = 1.
    feature_net: MlpParams = None
    augment: bool = True
    data_scale: float = 1.

    def __post_init__(self):
        if self.kind not in SD_KINDS:
            raise ConfigError("sd.kind: unknown kind {}, must be one of "
                              "{}".format(self.kind, SD_KINDS))
        if not self.alpha >= 0:
            raise ConfigError("sd.alpha: must be >= 0, got {}".format(self.alpha))
        if self.kind == "feature":
            if self.feature_net is None:
                raise ConfigError("sd.kind: kind feature requires a feature net")
            if not self.feature_net.frozen or any(
                    p.requires_grad for p in self.feature_net.parameters()):
                raise ValueError("The feature net of the SD loss must be frozen")
        if not self.data_scale > 0:
            raise ValueError("data_scale must be > 0, got {}".format(
                self.data_scale))


def discriminator_loss(d_real, d_fake):
    """ softplus(-D(x)) + softplus(D(G(z))), both averaged over the batch. """
    return T.add(T.mean(T.softplus(T.neg(d_real))), T.mean(T.softplus(d_fake)))


def generator_adv_loss(d_fake):
    """ Non-saturating generator loss softplus(-D(G(z))), batch mean. """
    return T.mean(T.softplus(T.neg(d_fake)))


def adversarial_losses(d_real_logits, d_fake_logits):
    """
    Non-saturating logistic GAN losses.

    Parameters
    ----------
    d_real_logits : sdganlab.tensor.Node
        Discriminator logits on real samples, shape (batch, 1).
    d_fake_logits : sdganlab.tensor.Node
        Discriminator logits on generated samples.

    Returns
    -------
    loss_D : sdganlab.tensor.Node
    loss_G_adv : sdganlab.tensor.Node

    """
    for name, logits in (("real", d_real_logits), ("fake", d_fake_logits)):
        if not np.all(np.isfinite(logits.value)):
            raise ValueError("Non-finite {} logits".format(name))
    return (discriminator_loss(d_real_logits, d_fake_logits),
            generator_adv_loss(d_fake_logits))


def reflection_matrix(angle):
    """ Reflection across the line through the origin at the given angle. """
    c, s = np.cos(2 * angle), np.sin(2 * angle)
    return np.array([[c, s], [s, -c]])


def rotation_matrix(angle):
    """ Counterclockwise rotation of row vectors, x -> x @ R. """
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, s], [-s, c]])


def sample_transform(rng, scale=1.):
    """
    Draw one random affine transform x -> x @ matrix + offset.

    RANDOM_APPLY of the three transforms (reflection, rotation,
    translation) are picked in random order, and each of them is applied
    with probability AUGMENT_PROB. Every call consumes the same amount of
    random numbers.

    Returns
    -------
    matrix : ndarray
        Orthogonal, shape (2, 2).
    offset : ndarray
        Shape (2, ).

    """
    matrix, offset = np.eye(2), np.zeros(2)
    order = rng.permutation(3)[:RANDOM_APPLY]
    for op in order:
        apply = rng.random() < AUGMENT_PROB
        params = rng.uniform(-1., 1., 2)
        if not apply:
            continue
        if op == 0:
            step, shift = reflection_matrix(np.pi * params[0]), np.zeros(2)
        elif op == 1:
            step = rotation_matrix(np.deg2rad(MAX_ROTATION_DEG) * params[0])
            shift = np.zeros(2)
        else:
            step, shift = np.eye(2), MAX_TRANSLATION * scale * params
        matrix, offset = matrix @ step, offset @ step + shift
    return matrix, offset


def shared_augment(a, b, rng, enabled, scale=1.):
    """
    Apply one random transform to both batches of points.

    Parameters
    ----------
    a, b : sdganlab.tensor.Node
        Batches of 2-D points of the same shape.
    rng : sdganlab.rng.Rng
        Not used if enabled is False.
    enabled : bool
    scale : float
        Data scale for the translation.

    Returns
    -------
    tuple
        The transformed nodes. Gradients flow through to both inputs.

    """
    if a.shape != b.shape:
        raise ShapeError("shared_augment: shapes {} and {} do not conform".format(
            a.shape, b.shape))
    if not enabled:
        return a, b
    if a.value.ndim != 2 or a.shape[1] != 2:
        raise ShapeError("shared_augment: expected a batch of 2-D points, got "
                         "shape {}".format(a.shape))
    matrix, offset = sample_transform(rng, scale)
    weight, bias = T.constant(matrix), T.constant(offset)
    return T.linear(a, weight, bias), T.linear(b, weight, bias)


def sd_loss(student_out, teacher_out, spec, rng):
    """
    Self-distillation distance between generator and EMA generator outputs.

    Parameters
    ----------
    student_out : sdganlab.tensor.Node
        G(z).
    teacher_out : sdganlab.tensor.Node
        The detached output of the EMA generator on the same z.
    spec : SdLossSpec
    rng : sdganlab.rng.Rng
        Drawn from only if spec.augment.

    Returns
    -------
    sdganlab.tensor.Node
        Scalar. mean |a - b| for l1, mean (a - b)^2 for l2, and the mean
        squared difference of the feature net embeddings for feature.

    """
    if student_out.shape != teacher_out.shape:
        raise ShapeError("sd_loss: shapes {} and {} do not conform".format(
            student_out.shape, teacher_out.shape))
    if teacher_out.requires_grad:
        raise ValueError("sd_loss: teacher output has to be detached")
    a, b = shared_augment(student_out, teacher_out, rng, spec.augment,
                          spec.data_scale)
    if spec.kind == "l1":
        return T.mean(T.abs(T.sub(a, b)))
    elif spec.kind == "l2":
        return T.mean(T.square(T.sub(a, b)))
    else:
        return T.mean(T.square(T.sub(forward_mlp(spec.feature_net, a),
                                     forward_mlp(spec.feature_net, b))))


def per_sample_sd(student_out, teacher_out, spec):
    """
    The SD distance of every single sample, without augmentation.

    Parameters
    ----------
    student_out, teacher_out : ndarray
        Shape (n, d).
    spec : SdLossSpec

    Returns
    -------
    ndarray
        Shape (n, ). Entry i equals sd_loss on the batch consisting of
        sample i only, with augmentation disabled.

    """
    a = np.asarray(student_out, dtype=np.float64)
    b = np.asarray(teacher_out, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("per_sample_sd: shapes {} and {} do not conform".format(
            a.shape, b.shape))
    if spec.kind == "l1":
        return np.mean(np.abs(a - b), axis=1)
    elif spec.kind == "l2":
        return np.mean((a - b) ** 2, axis=1)
    else:
        diff = forward_numpy(spec.feature_net, a) - \
            forward_numpy(spec.feature_net, b)
        return np.mean(diff ** 2, axis=1)
