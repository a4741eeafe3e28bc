#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Fully connected networks and the EMA copy of the generator.
"""

from dataclasses import dataclass

import numpy as np

import sdganlab.tensor as T
from sdganlab.exceptions import ShapeError


@dataclass
class MlpParams:
    """
    Weights and biases of a multi layer perceptron.

    Every hidden layer is an affine map followed by the activation, the
    last layer is affine only.

    Attributes
    ----------
    layers : List
        Tuples (weight, bias) of nodes, with weight of shape
        (n_in, n_out) and bias of shape (n_out, ).
    activation : str
        Activation of the hidden layers, either tanh, relu or linear.
    frozen : bool
        If True, the nodes do not require a gradient, and the network
        is never handed to an optimizer.

    """
    layers: list
    activation: str = "tanh"
    frozen: bool = False

    def __post_init__(self):
        if len(self.layers) == 0:
            raise ValueError("A network needs at least one layer")
        if self.activation not in T.ACTIVATIONS:
            raise ValueError("Unknown activation {}, must be one of {}".format(
                self.activation, list(T.ACTIVATIONS)))
        n_in = None
        for i, (weight, bias) in enumerate(self.layers):
            if weight.value.ndim != 2 or bias.value.ndim != 1 or \
                    weight.shape[1] != bias.shape[0]:
                raise ShapeError("Layer {}: weight {} and bias {} do not "
                                 "conform".format(i, weight.shape, bias.shape))
            if n_in is not None and weight.shape[0] != n_in:
                raise ShapeError("Layer {}: expected {} inputs, got weight of "
                                 "shape {}".format(i, n_in, weight.shape))
            if not (np.all(np.isfinite(weight.value))
                    and np.all(np.isfinite(bias.value))):
                raise ValueError("Layer {} contains non-finite entries".format(i))
            n_in = weight.shape[1]

    @property
    def input_dim(self):
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self):
        return self.layers[-1][0].shape[1]

    @property
    def dims(self):
        """ Widths of all layers, input first, e.g. [2, 32, 32, 2]. """
        return [self.input_dim] + [w.shape[1] for w, b in self.layers]

    def parameters(self):
        """ All nodes as a flat list, [w_0, b_0, w_1, b_1, ...]. """
        params = []
        for weight, bias in self.layers:
            params.extend((weight, bias))
        return params

    def architecture(self):
        return {"dims": self.dims, "activation": self.activation}

    def to_arrays(self):
        """ Copies of the values as a list of [weight, bias] arrays. """
        return [[w.value.copy(), b.value.copy()] for w, b in self.layers]

    @classmethod
    def from_arrays(cls, arrays, activation="tanh", frozen=False):
        make = T.constant if frozen else T.parameter
        layers = []
        for i, (weight, bias) in enumerate(arrays):
            layers.append((make(weight, name="w_{}".format(i)),
                           make(bias, name="b_{}".format(i))))
        return cls(layers, activation=activation, frozen=frozen)

    def copy(self, frozen=None):
        """ An independent network with the same values. """
        if frozen is None:
            frozen = self.frozen
        return MlpParams.from_arrays(self.to_arrays(), self.activation, frozen)

    def check_congruent(self, other):
        """ Raise a ShapeError naming the first layer whose shapes differ. """
        if len(self.layers) != len(other.layers):
            raise ShapeError("Networks have {} and {} layers".format(
                len(self.layers), len(other.layers)))
        for i, ((w1, b1), (w2, b2)) in enumerate(zip(self.layers, other.layers)):
            if w1.shape != w2.shape or b1.shape != b2.shape:
                raise ShapeError(
                    "Layer {}: weight {} / bias {} vs weight {} / bias {}".format(
                        i, w1.shape, b1.shape, w2.shape, b2.shape))


def init_mlp(dims, rng, activation="tanh", frozen=False):
    """
    Glorot-uniform weights and zero biases.

    Parameters
    ----------
    dims : List
        Widths of all layers including input and output, e.g. [2, 32, 32, 2].
    rng : sdganlab.rng.Rng
        The weights are drawn from this stream.
    activation : str
        Activation of the hidden layers.
    frozen : bool
        Create constant nodes instead of parameters.

    Returns
    -------
    MlpParams

    """
    if len(dims) < 2 or any(int(d) <= 0 for d in dims):
        raise ValueError("Invalid layer widths {}".format(dims))
    arrays = []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6. / (n_in + n_out))
        arrays.append([rng.uniform(-limit, limit, (n_in, n_out)),
                       np.zeros(n_out)])
    return MlpParams.from_arrays(arrays, activation=activation, frozen=frozen)


def forward_mlp(net, x):
    """
    Apply the network to a batch.

    Parameters
    ----------
    net : MlpParams
    x : sdganlab.tensor.Node
        Shape (batch, net.input_dim).

    Returns
    -------
    sdganlab.tensor.Node
        Shape (batch, net.output_dim).

    """
    if x.value.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError("forward_mlp: input of shape {} for a network with "
                         "{} inputs".format(x.shape, net.input_dim))
    act = T.ACTIVATIONS[net.activation]
    out = x
    for i, (weight, bias) in enumerate(net.layers):
        out = T.linear(out, weight, bias)
        if act is not None and i < len(net.layers) - 1:
            out = act(out)
    return out


def forward_numpy(net, x):
    """ Same as forward_mlp, on plain arrays and without building a graph. """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError("forward_numpy: input of shape {} for a network with "
                         "{} inputs".format(x.shape, net.input_dim))
    out = x
    for i, (weight, bias) in enumerate(net.layers):
        out = out @ weight.value + bias.value
        if i < len(net.layers) - 1:
            if net.activation == "tanh":
                out = np.tanh(out)
            elif net.activation == "relu":
                out = out * (out > 0).astype(np.float64)
    return out


class EmaTracker:
    """
    Exponential moving average of the generator weights.

    The shadow nodes require a gradient so that a leak of gradient
    into the teacher would be visible, but they are never given to an
    optimizer.

    Attributes
    ----------
    beta : float
        Decay in [0, 1).
    shadow : MlpParams
        The averaged generator.

    """
    def __init__(self, beta, source=None, shadow=None):
        if not 0 <= beta < 1:
            raise ValueError("EMA beta must be in [0, 1), got {}".format(beta))
        if shadow is None:
            if source is None:
                raise ValueError("Either source or shadow has to be given")
            shadow = source.copy(frozen=False)
        elif source is not None:
            shadow.check_congruent(source)
        self.beta = float(beta)
        self.shadow = shadow

    def update(self, source):
        ema_update(self, source)

    def parameters(self):
        return self.shadow.parameters()


def ema_update(tracker, source):
    """ shadow <- beta * shadow + (1 - beta) * source, for every entry. """
    tracker.shadow.check_congruent(source)
    beta = tracker.beta
    for shadow_node, source_node in zip(tracker.shadow.parameters(),
                                        source.parameters()):
        shadow_node.value = beta * shadow_node.value + \
            (1. - beta) * source_node.value
