#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Reading and writing files in the output folder.
"""

import json
import os
from dataclasses import dataclass

import h5py
import numpy as np

from sdganlab.exceptions import (
    CheckpointFormatError, CheckpointShapeError, CheckpointVersionError,
    ConfigError)
from sdganlab.logging import write_csv
from sdganlab.metrics import CheckpointSeries

CHECKPOINT_VERSION = 1


def get_subfolder(main_folder, name=None, create=False):
    """
    Get the path to one or all subfolders of the main folder.

    Parameters
    ----------
    main_folder : str
        The main folder.
    name : str or None
        The name of the subfolder.
    create : bool
        If the subfolder should be created if it does not exist.

    Returns
    -------
    subfolder : str or List
        The path of the subfolder. If name is None, all subfolders
        will be returned as a list.

    """
    subfolders = ("train_log", "saved_models", "samples", "dirac", "reports")

    def get(fdr):
        if fdr not in subfolders:
            raise NameError("Unknown subfolder {}, must be one of {}".format(
                fdr, subfolders))
        subfdr = os.path.join(main_folder, fdr)
        if create and not os.path.exists(subfdr):
            print("Creating directory: " + subfdr)
            os.makedirs(subfdr)
        return subfdr

    if name is None:
        return [get(fdr) for fdr in subfolders]
    return get(name)


class IOHandler(object):
    """
    Access the files of the output folder given in the cfg object.
    """
    def __init__(self, cfg):
        self.cfg = cfg

    @property
    def output_folder(self):
        return self.cfg.output_folder

    def get_subfolder(self, name=None, create=False):
        return get_subfolder(self.output_folder, name, create)

    def print_log(self, lines, logging=True):
        """ Print and also log to the log.txt file in the output folder. """
        if isinstance(lines, str):
            lines = [lines]
        for line in lines:
            print(line)
        if logging:
            os.makedirs(self.output_folder, exist_ok=True)
            with open(os.path.join(self.output_folder, "log.txt"), "a+") as f:
                for line in lines:
                    f.write(line + "\n")

    def get_record_path(self, name, ext="csv"):
        """ Path of the record files of a run, e.g. train_log/baseline-aug_seed0.csv """
        return os.path.join(self.get_subfolder("train_log"),
                            "{}.{}".format(name, ext))

    def get_checkpoint_path(self, name, step):
        return os.path.join(self.get_subfolder("saved_models"),
                            "{}_step{:07d}.json".format(name, step))

    def get_latest_checkpoint(self, name):
        """ Path of the checkpoint of a run with the highest step, or None. """
        folder = self.get_subfolder("saved_models")
        if not os.path.exists(folder):
            return None
        prefix = name + "_step"
        steps = []
        for file in os.listdir(folder):
            if file.startswith(prefix) and file.endswith(".json"):
                steps.append(int(file[len(prefix):-len(".json")]))
        if not steps:
            return None
        return self.get_checkpoint_path(name, max(steps))

    def get_samples_path(self, name):
        return os.path.join(self.get_subfolder("samples"), name + ".h5")

    def check_config(self):
        """
        Write config.json into the output folder, or compare to the
        existing one.

        Raises
        ------
        ConfigError
            If the output folder belongs to a different configuration.

        """
        os.makedirs(self.output_folder, exist_ok=True)
        path = os.path.join(self.output_folder, "config.json")
        if os.path.isfile(path):
            with open(path) as f:
                stored_hash = json.load(f).get("config_hash")
            if stored_hash != self.cfg.config_hash:
                raise ConfigError(
                    "Output folder {} belongs to a different configuration "
                    "(config hash {}, now {})".format(
                        self.output_folder, stored_hash, self.cfg.config_hash))
        else:
            content = {"config_hash": self.cfg.config_hash,
                       "config": self.cfg.to_dict(hashed_only=True)}
            with open(path, "w") as f:
                json.dump(content, f, indent=1, sort_keys=True)

    def write_csv(self, path, column_names, rows):
        write_csv(path, column_names, rows, self.cfg.config_hash)

    def write_json(self, path, content):
        with open(path, "w") as f:
            json.dump(content, f, indent=1, sort_keys=True)
            f.write("\n")

    def save_series(self, name, series):
        save_series(self.get_samples_path(name), series, self.cfg.config_hash)

    def load_series(self, name):
        return load_series(self.get_samples_path(name))


def save_series(path, series, config_hash=""):
    """ Store a metrics.CheckpointSeries in an h5 file. """
    if len(series.outputs) == 0:
        raise ValueError("Can not save a checkpoint series without checkpoints")
    with h5py.File(path, "w") as f:
        f.attrs["config_hash"] = config_hash
        f.create_dataset("latents", data=series.latents)
        f.create_dataset("fractions", data=np.array(series.fractions))
        f.create_dataset("outputs", data=np.stack(series.outputs))


def load_series(path):
    with h5py.File(path, "r") as f:
        latents = f["latents"][()]
        fractions = tuple(f["fractions"][()])
        outputs = [out for out in f["outputs"][()]]
    return CheckpointSeries(latents, outputs, fractions)


@dataclass
class Checkpoint:
    """
    The state of a training.

    Attributes
    ----------
    architecture : dict
        Widths of generator and discriminator, and the activation.
    generator, discriminator : List
        [weight, bias] arrays per layer.
    ema : List or None
        [weight, bias] arrays of the EMA generator.
    step : int
        Number of completed training steps.
    seed : int
    rng : dict or None
        States of the random streams of the run.
    optimizer : dict or None
        State dicts of the generator and discriminator optimizers.
    version : int

    """
    architecture: dict
    generator: list
    discriminator: list
    ema: list = None
    step: int = 0
    seed: int = 0
    rng: dict = None
    optimizer: dict = None
    version: int = CHECKPOINT_VERSION

    @classmethod
    def from_run(cls, run, builder):
        """ Checkpoint of a backend.TrainingRun. """
        return cls(architecture=builder.architecture(),
                   generator=run.gen.to_arrays(),
                   discriminator=run.disc.to_arrays(),
                   ema=run.ema.shadow.to_arrays(),
                   step=run.step, seed=run.seed, rng=run.rng_state(),
                   optimizer=run.optimizer_state())

    def to_dict(self):
        content = {
            "format_version": self.version,
            "architecture": self.architecture,
            "generator": _arrays_to_lists(self.generator),
            "discriminator": _arrays_to_lists(self.discriminator),
            "step": int(self.step),
            "seed": int(self.seed),
        }
        if self.ema is not None:
            content["ema"] = _arrays_to_lists(self.ema)
        if self.rng is not None:
            content["rng"] = self.rng
        if self.optimizer is not None:
            content["optimizer"] = self.optimizer
        return content

    def dumps(self):
        """ Floats are written with python's shortest round-trip repr. """
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _arrays_to_lists(layers):
    return [[np.asarray(w, dtype=np.float64).tolist(),
             np.asarray(b, dtype=np.float64).tolist()] for w, b in layers]


def save_checkpoint(path, checkpoint):
    with open(path, "w") as f:
        f.write(checkpoint.dumps())


def _layers_from_lists(content, net, dims):
    """ Arrays of one network, checked against the architecture block. """
    layers = content[net]
    if len(layers) != len(dims) - 1:
        raise CheckpointShapeError("{}: {} layers stored, architecture has "
                                   "{}".format(net, len(layers), len(dims) - 1))
    arrays = []
    for i, layer in enumerate(layers):
        try:
            weight, bias = (np.array(x, dtype=np.float64) for x in layer)
        except (TypeError, ValueError) as e:
            raise CheckpointFormatError("{} layer {}: malformed arrays "
                                        "({})".format(net, i, e)) from None
        if weight.shape != (dims[i], dims[i+1]):
            raise CheckpointShapeError(
                "{} layer {}: weight of shape {}, architecture says {}".format(
                    net, i, weight.shape, (dims[i], dims[i+1])))
        if bias.shape != (dims[i+1], ):
            raise CheckpointShapeError(
                "{} layer {}: bias of shape {}, architecture says {}".format(
                    net, i, bias.shape, (dims[i+1], )))
        if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
            raise CheckpointFormatError("{} layer {}: non-finite entries".format(
                net, i))
        arrays.append([weight, bias])
    return arrays


def load_checkpoint(path):
    """
    Read a checkpoint file.

    Raises
    ------
    CheckpointFormatError
        If the file is no valid checkpoint document.
    CheckpointVersionError
        If the format version is not supported.
    CheckpointShapeError
        If a parameter array does not fit the architecture block.

    """
    with open(path) as f:
        text = f.read()
    try:
        content = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointFormatError("{} is not a valid json document: "
                                    "{}".format(path, e)) from None
    if not isinstance(content, dict):
        raise CheckpointFormatError("{} does not contain a json object".format(
            path))
    try:
        version = content["format_version"]
        if not isinstance(version, int):
            raise CheckpointFormatError("Invalid format version {!r} in "
                                        "{}".format(version, path))
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                "Checkpoint {} has format version {}, this version of sdganlab "
                "reads version {}".format(path, version, CHECKPOINT_VERSION))
        architecture = content["architecture"]
        generator = _layers_from_lists(content, "generator",
                                       architecture["generator"])
        discriminator = _layers_from_lists(content, "discriminator",
                                           architecture["discriminator"])
        ema = None
        if "ema" in content:
            ema = _layers_from_lists(content, "ema", architecture["generator"])
        step, seed = content["step"], content["seed"]
    except KeyError as e:
        raise CheckpointFormatError("Missing entry {} in checkpoint {}".format(
            e.args[0], path)) from None
    known = {"format_version", "architecture", "generator", "discriminator",
             "ema", "step", "seed", "rng", "optimizer"}
    unknown = set(content) - known
    if unknown:
        raise CheckpointFormatError("Unknown entries {} in checkpoint {}".format(
            sorted(unknown), path))
    return Checkpoint(architecture=architecture, generator=generator,
                      discriminator=discriminator, ema=ema, step=step,
                      seed=seed, rng=content.get("rng"),
                      optimizer=content.get("optimizer"), version=version)
