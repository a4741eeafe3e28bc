#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Scripts for making the networks of a run.
"""

import toml

from sdganlab.exceptions import ShapeError
from sdganlab.networks import init_mlp
from sdganlab.rng import Rng

DATA_DIM = 2


class ModelBuilder:
    """
    Build generator, discriminator and feature net from the [model] section.

    Attributes
    ----------
    generator_layers : List
        Widths of the generator layers, first one is the latent dimension.
    discriminator_layers : List
        Widths of the discriminator layers, last one has to be 1.
    feature_layers : List
        Widths of the frozen feature net.
    activation : str
        Hidden layer activation of generator and discriminator.
    feature_activation : str
        Hidden layer activation of the feature net.
    feature_seed : int
        The feature net is always drawn with this seed, so that it is the
        same for every run and every cell.

    """
    def __init__(self, model_section=None):
        """
        Parameters
        ----------
        model_section : dict or object, optional
            The [model] section, as a dict or as an object with the same
            attributes. Missing entries get the default values.

        """
        self.generator_layers = [2, 32, 32, DATA_DIM]
        self.discriminator_layers = [DATA_DIM, 32, 32, 1]
        self.feature_layers = [DATA_DIM, 64, 64, 16]
        self.activation = "tanh"
        self.feature_activation = "tanh"
        self.feature_seed = 1234

        if model_section is not None:
            if not isinstance(model_section, dict):
                model_section = {key: getattr(model_section, key)
                                 for key in vars(self)}
            for key, value in model_section.items():
                if not hasattr(self, key):
                    raise KeyError("Unknown parameter in model section: "
                                   "{}".format(key))
                setattr(self, key, value)
        self._check_layers()

    @classmethod
    def from_file(cls, model_file):
        """ Read the [model] table of a toml file. """
        file_content = toml.load(model_file)
        try:
            return cls(file_content["model"])
        except KeyError as e:
            raise KeyError("Missing or unknown parameter in toml model file: "
                           + str(e.args[0])) from None

    def _check_layers(self):
        if self.generator_layers[-1] != DATA_DIM:
            raise ShapeError("Generator has to output {} dimensions, got "
                             "{}".format(DATA_DIM, self.generator_layers[-1]))
        if self.discriminator_layers[0] != DATA_DIM or \
                self.discriminator_layers[-1] != 1:
            raise ShapeError("Discriminator has to map {} dimensions to 1, got "
                             "{}".format(DATA_DIM, self.discriminator_layers))
        if self.feature_layers[0] != DATA_DIM:
            raise ShapeError("Feature net has to take {} dimensions, got "
                             "{}".format(DATA_DIM, self.feature_layers[0]))

    @property
    def latent_dim(self):
        return self.generator_layers[0]

    def build_generator(self, rng):
        return init_mlp(self.generator_layers, rng, self.activation)

    def build_discriminator(self, rng):
        return init_mlp(self.discriminator_layers, rng, self.activation)

    def build_feature_net(self):
        """ The frozen random embedding used by the feature SD loss and the
        feature space metrics. """
        return init_mlp(self.feature_layers, Rng(self.feature_seed),
                        self.feature_activation, frozen=True)

    def architecture(self):
        """ Description of generator and discriminator, as stored in
        checkpoints. """
        return {
            "generator": list(self.generator_layers),
            "discriminator": list(self.discriminator_layers),
            "activation": self.activation,
        }

    def check_architecture(self, architecture):
        """
        Compare the architecture block of a checkpoint to this builder.

        Raises
        ------
        ShapeError
            Listing every layer whose shape differs.

        """
        if architecture.get("activation") != self.activation:
            raise ShapeError("Activation {} does not match the configured "
                             "{}".format(architecture.get("activation"),
                                         self.activation))
        problems = []
        for net, configured in (("generator", self.generator_layers),
                                ("discriminator", self.discriminator_layers)):
            stored = list(architecture.get(net, []))
            if len(stored) != len(configured):
                problems.append("{}: {} layers, configured {}".format(
                    net, len(stored) - 1, len(configured) - 1))
                continue
            for i in range(len(configured) - 1):
                got = (stored[i], stored[i+1])
                want = (configured[i], configured[i+1])
                if got != want:
                    problems.append("{} layer {}: weight {}, configured "
                                    "{}".format(net, i, got, want))
        if problems:
            raise ShapeError("Architecture mismatch: " + "; ".join(problems))
