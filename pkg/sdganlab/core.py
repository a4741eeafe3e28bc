#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Core scripts for the sdganlab package.
"""

import hashlib
import json
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, replace

import numpy as np
import toml

import sdganlab.dirac as dirac
import sdganlab.logging as slog
from sdganlab.backend import TrainingRun, warm_start
from sdganlab.datasets import DATA_KINDS, DataSpec
from sdganlab.exceptions import ConfigError, DivergenceError
from sdganlab.history import HistoryHandler
from sdganlab.in_out import IOHandler, Checkpoint, load_checkpoint, \
    save_checkpoint
from sdganlab.losses import SD_KINDS, SdLossSpec
from sdganlab.metrics import (
    CheckpointSeries, evaluate_generator, rank_joint_extremes,
    trajectory_variance)
from sdganlab.model_builder import ModelBuilder
from sdganlab.networks import forward_numpy
from sdganlab.optimizers import get_optimizer
from sdganlab.rng import Rng
from sdganlab.utilities.summarize_training import Summarizer

MODES = ("dirac_study", "train", "finetune", "ablate", "rank")


@dataclass(frozen=True)
class Cell:
    """
    One variant of the training in an ablation grid.

    Attributes
    ----------
    name : str
        E.g. baseline-aug or sd-feature-noaug.
    kind : str
        Kind of the SD loss. For baselines, the kind of the monitored loss.
    alpha : float
        Weight of the SD loss, 0 for baselines.
    augment : bool

    """
    name: str
    kind: str
    alpha: float
    augment: bool

    @classmethod
    def make(cls, kind, alpha, augment):
        aug = "aug" if augment else "noaug"
        if alpha == 0:
            name = "baseline-{}".format(aug)
        else:
            name = "sd-{}-{}".format(kind, aug)
        return cls(name, kind, float(alpha), bool(augment))


# ------------- Configuration -------------#


def _fail(path, message):
    raise ConfigError("{}: {}".format(path, message))


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool) \
        and np.isfinite(value)


def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)


def _check_int(path, value, minimum):
    if not _is_int(value) or value < minimum:
        _fail(path, "must be an integer >= {}, got {!r}".format(minimum, value))


def _check_positive(path, value):
    if not _is_number(value) or not value > 0:
        _fail(path, "must be a number > 0, got {!r}".format(value))


def _check_bool(path, value):
    if not isinstance(value, bool):
        _fail(path, "must be true or false, got {!r}".format(value))


def _check_choice(path, value, choices):
    if value not in choices:
        _fail(path, "must be one of {}, got {!r}".format(list(choices), value))


def _check_widths(path, value):
    if not isinstance(value, list) or len(value) < 2 or \
            not all(_is_int(v) and v > 0 for v in value):
        _fail(path, "must be a list of at least 2 positive integers, got "
                    "{!r}".format(value))


class ConfigSection:
    """
    One table of the configuration.

    The defaults are set in the constructor of the subclasses. Only keys
    that have a default can be set.

    """
    name = ""

    def _finish_init(self):
        self._default_values = dict(self.__dict__)

    @property
    def default_values(self):
        return self._default_values

    def set_values(self, values):
        if not isinstance(values, dict):
            _fail(self.name, "must be a table, got {!r}".format(values))
        for key, value in values.items():
            if key not in self._default_values:
                _fail("{}.{}".format(self.name, key), "unknown key")
            if isinstance(value, tuple):
                value = list(value)
            setattr(self, key, value)

    def to_dict(self):
        return {key: getattr(self, key) for key in self._default_values}

    def non_default_values(self):
        return {"{}.{}".format(self.name, key): value
                for key, value in self.to_dict().items()
                if value != self._default_values[key]}

    def path(self, key):
        return "{}.{}".format(self.name, key)

    def validate(self):
        pass


class DataSection(ConfigSection):
    """ [data]: the training distribution, see datasets.DataSpec. """
    name = "data"

    def __init__(self, name=None):
        self.kind = "ring_of_gaussians"
        self.n_modes = 8
        self.mode_std = 0.05
        self.radius_or_spacing = 2.
        self._finish_init()
        if name is not None:
            self.name = name

    def validate(self):
        _check_choice(self.path("kind"), self.kind, DATA_KINDS)
        _check_int(self.path("n_modes"), self.n_modes, 1)
        _check_positive(self.path("mode_std"), self.mode_std)
        _check_positive(self.path("radius_or_spacing"), self.radius_or_spacing)
        try:
            self.spec()
        except ValueError as e:
            _fail(self.name, str(e))

    def spec(self):
        return DataSpec(**self.to_dict())


class SdSection(ConfigSection):
    """ [sd]: the self-distillation loss. """
    name = "sd"

    def __init__(self):
        self.kind = "feature"
        self.alpha = 1.
        self.augment = True
        # SD loss enters the generator objective every interval-th step
        self.interval = 1
        self.auto_alpha = False
        self._finish_init()

    def validate(self):
        _check_choice(self.path("kind"), self.kind, SD_KINDS)
        if not _is_number(self.alpha) or self.alpha < 0:
            _fail(self.path("alpha"), "must be a number >= 0, got "
                                      "{!r}".format(self.alpha))
        _check_bool(self.path("augment"), self.augment)
        _check_int(self.path("interval"), self.interval, 1)
        _check_bool(self.path("auto_alpha"), self.auto_alpha)


class TrainingSection(ConfigSection):
    """ [training]: steps, optimizers and evaluation. """
    name = "training"

    def __init__(self):
        self.steps = 20000
        self.batch_size = 128
        self.optimizer = "adam"
        self.lr_G = 2e-4
        self.lr_D = 2e-4
        self.adam_betas = [0.5, 0.999]
        self.beta_ema = 0.999
        self.latent_dim = 2
        self.checkpoint_fractions = [0.2, 0.4, 0.6, 0.8, 1.]
        self.eval_interval = 1000
        self.eval_samples = 2048
        self.threshold_std = 3.
        self.variance_latents = 480
        self.variance_distance = "feature"
        self._finish_init()

    def validate(self):
        _check_int(self.path("steps"), self.steps, 1)
        _check_int(self.path("batch_size"), self.batch_size, 1)
        _check_choice(self.path("optimizer"), self.optimizer, ("adam", "sgd"))
        _check_positive(self.path("lr_G"), self.lr_G)
        _check_positive(self.path("lr_D"), self.lr_D)
        betas = self.adam_betas
        if not isinstance(betas, list) or len(betas) != 2 or \
                not all(_is_number(b) and 0 <= b < 1 for b in betas):
            _fail(self.path("adam_betas"), "must be two numbers in [0, 1), "
                                           "got {!r}".format(betas))
        if not _is_number(self.beta_ema) or not 0 <= self.beta_ema < 1:
            _fail(self.path("beta_ema"), "must be in [0, 1), got "
                                         "{!r}".format(self.beta_ema))
        _check_int(self.path("latent_dim"), self.latent_dim, 1)
        fractions = self.checkpoint_fractions
        if not isinstance(fractions, list) or len(fractions) == 0 or \
                not all(_is_number(f) and 0 < f <= 1 for f in fractions) or \
                np.any(np.diff(fractions) <= 0):
            _fail(self.path("checkpoint_fractions"),
                  "must be strictly increasing numbers in (0, 1], got "
                  "{!r}".format(fractions))
        _check_int(self.path("eval_interval"), self.eval_interval, 1)
        _check_int(self.path("eval_samples"), self.eval_samples, 17)
        _check_positive(self.path("threshold_std"), self.threshold_std)
        _check_int(self.path("variance_latents"), self.variance_latents, 1)
        _check_choice(self.path("variance_distance"), self.variance_distance,
                      ("l1", "l2", "feature"))


class ModelSection(ConfigSection):
    """ [model]: layer widths, see model_builder.ModelBuilder. """
    name = "model"

    def __init__(self):
        builder = ModelBuilder()
        self.generator_layers = builder.generator_layers
        self.discriminator_layers = builder.discriminator_layers
        self.feature_layers = builder.feature_layers
        self.activation = builder.activation
        self.feature_activation = builder.feature_activation
        self.feature_seed = builder.feature_seed
        self._finish_init()

    def validate(self):
        for key in ("generator_layers", "discriminator_layers",
                    "feature_layers"):
            _check_widths(self.path(key), getattr(self, key))
        _check_choice(self.path("activation"), self.activation,
                      ("tanh", "relu", "linear"))
        _check_choice(self.path("feature_activation"),
                      self.feature_activation, ("tanh", "relu", "linear"))
        _check_int(self.path("feature_seed"), self.feature_seed, 0)
        try:
            ModelBuilder(self.to_dict())
        except ValueError as e:
            _fail(self.name, str(e))


class DiracSection(ConfigSection):
    """ [dirac]: the Dirac-GAN study. """
    name = "dirac"

    def __init__(self):
        self.eta_G = 0.1
        self.eta_D = 0.1
        self.eta_phi = 0.01
        self.alpha = 1.
        self.c = 1.
        # EMA decay of the discrete simulation
        self.beta = 0.99
        self.steps = 5000
        self.update = "simultaneous"
        self.s0 = [1., 1., 1.]
        self.t_end = 100.
        self.dt = 1e-3
        self.integrator = "rk4"
        self.alpha_grid = [0., 0.01, 0.1, 1.]
        self.eta_phi_grid = [0.001, 0.01, 0.1]
        # only every csv_stride-th state of the ode trajectories is written
        self.csv_stride = 10
        self._finish_init()

    def validate(self):
        try:
            self.params()
        except ValueError as e:
            _fail(self.name, str(e))
        if not _is_number(self.beta) or not 0 <= self.beta < 1:
            _fail(self.path("beta"), "must be in [0, 1), got "
                                     "{!r}".format(self.beta))
        _check_int(self.path("steps"), self.steps, 1)
        _check_choice(self.path("update"), self.update,
                      ("simultaneous", "alternating"))
        if not isinstance(self.s0, list) or len(self.s0) != 3 or \
                not all(_is_number(x) for x in self.s0):
            _fail(self.path("s0"), "must be 3 numbers, got {!r}".format(self.s0))
        _check_positive(self.path("t_end"), self.t_end)
        _check_positive(self.path("dt"), self.dt)
        _check_choice(self.path("integrator"), self.integrator, ("rk4", "euler"))
        for key in ("alpha_grid", "eta_phi_grid"):
            grid = getattr(self, key)
            if not isinstance(grid, list) or len(grid) == 0 or \
                    not all(_is_number(x) for x in grid):
                _fail(self.path(key), "must be a list of numbers, got "
                                      "{!r}".format(grid))
        for alpha in self.alpha_grid:
            try:
                self.params(alpha=alpha)
            except ValueError as e:
                _fail(self.path("alpha_grid"), str(e))
        for eta_phi in self.eta_phi_grid:
            try:
                self.params(eta_phi=eta_phi)
            except ValueError as e:
                _fail(self.path("eta_phi_grid"), str(e))
        _check_int(self.path("csv_stride"), self.csv_stride, 1)

    def params(self, **changes):
        values = dict(eta_G=self.eta_G, eta_D=self.eta_D, eta_phi=self.eta_phi,
                      alpha=self.alpha, c=self.c)
        values.update(changes)
        return dirac.DiracParams(**values)


class AblationSection(ConfigSection):
    """ [ablation]: the grid of cells of the ablate mode. """
    name = "ablation"

    def __init__(self):
        self.loss_kinds = ["l1", "l2", "feature"]
        self.augment = [True, False]
        self.include_baseline = True
        self._finish_init()

    def validate(self):
        if not isinstance(self.loss_kinds, list) or \
                len(set(self.loss_kinds)) != len(self.loss_kinds):
            _fail(self.path("loss_kinds"), "must be a list of distinct kinds, "
                                           "got {!r}".format(self.loss_kinds))
        for kind in self.loss_kinds:
            _check_choice(self.path("loss_kinds"), kind, SD_KINDS)
        if not isinstance(self.augment, list) or len(self.augment) == 0 or \
                len(set(self.augment)) != len(self.augment):
            _fail(self.path("augment"), "must be a list of distinct booleans, "
                                        "got {!r}".format(self.augment))
        for value in self.augment:
            _check_bool(self.path("augment"), value)
        _check_bool(self.path("include_baseline"), self.include_baseline)


class FinetuneSection(ConfigSection):
    """ [finetune]: continuing the training of a checkpoint. """
    name = "finetune"

    def __init__(self):
        self.steps = 1000
        # also run with alpha = 0
        self.compare = True
        # changes to [data] for the fine-tuning, empty for the same data
        self.data = {}
        self._finish_init()

    def validate(self):
        _check_int(self.path("steps"), self.steps, 1)
        _check_bool(self.path("compare"), self.compare)
        DataSection(self.path("data")).set_values(self.data)

    def data_section(self, base):
        """ The [data] section base with the changes of finetune.data. """
        section = DataSection(self.path("data"))
        section.set_values(base.to_dict())
        section.set_values(self.data)
        return section


class RankSection(ConfigSection):
    """ [rank]: the joint ranking by SD distance and D score. """
    name = "rank"

    def __init__(self):
        self.n_latents = 10000
        self.k = 200
        self.k_inner = 4
        self._finish_init()

    def validate(self):
        _check_int(self.path("k"), self.k, 1)
        _check_int(self.path("k_inner"), self.k_inner, 1)
        _check_int(self.path("n_latents"), self.n_latents, 4 * self.k)
        if self.k_inner > max(1, self.k // 2):
            _fail(self.path("k_inner"), "must be <= max(1, k // 2), got "
                                        "{}".format(self.k_inner))


SECTIONS = {
    "data": DataSection,
    "sd": SdSection,
    "training": TrainingSection,
    "model": ModelSection,
    "dirac": DiracSection,
    "ablation": AblationSection,
    "finetune": FinetuneSection,
    "rank": RankSection,
}
# top level keys that do not change the results
UNHASHED_KEYS = ("output_dir", "threads")
# |theta| + |psi| below which a Dirac simulation counts as converged
CONVERGED_TOL = 1e-2


class Configuration(object):
    """
    Contains all the configurable options of an experiment.

    All public attributes can be changed either directly or with a toml
    or json config file via update_config(). The tables of the config
    file are ConfigSection attributes of the same name.

    Attributes
    ----------
    mode : str
        dirac_study, train, finetune, ablate or rank.
    seeds : List
        Distinct integer seeds. Every cell is trained once per seed.
    output_dir : str or None
        Folder in which everything is saved.
    threads : int
        Number of worker processes for independent runs.
    data, sd, training, model, dirac, ablation, finetune, rank : ConfigSection
        The tables of the config.

    """
    def __init__(self, config_file=None, **kwargs):
        """
        Parameters
        ----------
        config_file : str or None
            Path to a toml or json config file with settings that are
            used instead of the default ones.
        kwargs
            Overwrites top level values given in the config file.

        """
        self.mode = "train"
        self.seeds = [0]
        self.output_dir = None
        self.threads = 1
        self._default_values = dict(self.__dict__)

        for name, section in SECTIONS.items():
            setattr(self, name, section())

        if config_file is not None:
            self.update_config(config_file)

        for key, val in kwargs.items():
            if key in self._default_values:
                setattr(self, key, val)
            else:
                raise ConfigError("{}: unknown key".format(key))

    def update_config(self, config_file):
        """ Update the values with the content of a toml or json file. """
        with open(config_file) as f:
            self.update_from_dict(load_config_text(f.read()))

    def update_from_dict(self, values):
        for key, value in values.items():
            if key in SECTIONS:
                getattr(self, key).set_values(value)
            elif key in self._default_values:
                setattr(self, key, value)
            else:
                _fail(key, "unknown key")

    @classmethod
    def from_dict(cls, values):
        cfg = cls()
        cfg.update_from_dict(values)
        cfg.validate()
        return cfg

    def validate(self):
        """ Check all values, raise a ConfigError naming the first bad one. """
        _check_choice("mode", self.mode, MODES)
        if not isinstance(self.seeds, list) or len(self.seeds) == 0 or \
                not all(_is_int(s) and s >= 0 for s in self.seeds) or \
                len(set(self.seeds)) != len(self.seeds):
            _fail("seeds", "must be a non-empty list of distinct integers "
                           ">= 0, got {!r}".format(self.seeds))
        if self.output_dir is not None and not isinstance(self.output_dir, str):
            _fail("output_dir", "must be a path, got {!r}".format(
                self.output_dir))
        _check_int("threads", self.threads, 1)
        for name in SECTIONS:
            getattr(self, name).validate()
        self.finetune.data_section(self.data).validate()
        if self.model.generator_layers[0] != self.training.latent_dim:
            _fail("model.generator_layers", "first width must equal "
                  "training.latent_dim ({})".format(self.training.latent_dim))
        if self.mode == "ablate" and not (self.ablation.loss_kinds
                                          or self.ablation.include_baseline):
            _fail("ablation", "the grid has no cells")

    def to_dict(self, hashed_only=False):
        content = {}
        for key in self._default_values:
            value = getattr(self, key)
            if value is None or (hashed_only and key in UNHASHED_KEYS):
                continue
            content[key] = list(value) if isinstance(value, tuple) else value
        for name in SECTIONS:
            content[name] = getattr(self, name).to_dict()
        return content

    def dumps(self, fmt="toml"):
        """ The config as a toml or json document. """
        if fmt == "toml":
            return toml.dumps(self.to_dict())
        elif fmt == "json":
            return json.dumps(self.to_dict(), indent=1, sort_keys=True)
        raise NameError("Unknown format {}, must be toml or json".format(fmt))

    @property
    def config_hash(self):
        """ sha256 of the canonical json of everything that influences the
        results. """
        canonical = json.dumps(self.to_dict(hashed_only=True), sort_keys=True,
                               separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @property
    def output_folder(self):
        if self.output_dir is None:
            raise ConfigError("output_dir: no output folder given")
        return self.output_dir

    @property
    def default_values(self):
        """ The default values for all top level settings. """
        return self._default_values

    def non_default_values(self):
        """ All settings that differ from the default, with dotted keys. """
        changed = {key: getattr(self, key) for key in self._default_values
                   if key not in UNHASHED_KEYS and
                   getattr(self, key) != self._default_values[key]}
        for name in SECTIONS:
            changed.update(getattr(self, name).non_default_values())
        return changed

    def cells(self):
        """ The cells to train in the train or ablate mode. """
        if self.mode == "ablate":
            cells = []
            for augment in self.ablation.augment:
                if self.ablation.include_baseline:
                    cells.append(Cell.make(self.sd.kind, 0., augment))
                for kind in self.ablation.loss_kinds:
                    cells.append(Cell.make(kind, self.sd.alpha, augment))
            return cells
        return [Cell.make(self.sd.kind, self.sd.alpha, self.sd.augment)]

    def finetune_data_spec(self):
        return self.finetune.data_section(self.data).spec()

    def __eq__(self, other):
        return isinstance(other, Configuration) and \
            self.to_dict() == other.to_dict()


def load_config_text(text):
    """ Parse a toml or json document into a dict. Json documents start
    with a curly bracket. """
    try:
        if text.lstrip().startswith("{"):
            return json.loads(text)
        return toml.loads(text)
    except (json.JSONDecodeError, toml.TomlDecodeError) as e:
        raise ConfigError("Can not parse config: {}".format(e)) from None


def parse_config(text):
    """
    Read a toml or json config document.

    Returns
    -------
    Configuration
        Validated, with defaults for everything not in the document.

    Raises
    ------
    ConfigError
        For malformed documents, unknown keys and invalid values. The
        message starts with the dotted path of the key.

    """
    return Configuration.from_dict(load_config_text(text))


# ------------- Organizer -------------#


def _train_cell_worker(task):
    """ Train one cell for one seed in a worker process. """
    cfg_dict, cell, seed = task
    orga = Organizer(cfg=Configuration.from_dict(cfg_dict))
    return orga.train_cell(Cell(**cell), seed).to_dict()


class Organizer:
    """
    Core class for running the experiments.

    Attributes
    ----------
    cfg : Configuration
        Contains all configurable options.
    io : sdganlab.in_out.IOHandler
        Utility functions for accessing the output folder.
    history : sdganlab.history.HistoryHandler
        For reading the records written during training.
    builder : sdganlab.model_builder.ModelBuilder
        Makes the networks as given in cfg.model.

    """
    def __init__(self, output_folder=None, config_file=None, cfg=None):
        """
        Parameters
        ----------
        output_folder : str, optional
            Folder in which everything will be saved. Overwrites output_dir
            of the config.
        config_file : str, optional
            Path to a toml or json config file with settings that are
            used instead of the default ones.
        cfg : Configuration, optional
            Use this configuration instead of reading config_file.

        """
        if cfg is None:
            cfg = Configuration(config_file)
        if output_folder is not None:
            cfg.output_dir = output_folder
        self.cfg = cfg
        self.io = IOHandler(self.cfg)
        self._feature_net = None

    @property
    def history(self):
        return HistoryHandler(self.cfg.output_folder)

    @property
    def builder(self):
        return ModelBuilder(self.cfg.model.to_dict())

    @property
    def feature_net(self):
        if self._feature_net is None:
            self._feature_net = self.builder.build_feature_net()
        return self._feature_net

    def _prepare(self, what):
        self.cfg.validate()
        self.io.get_subfolder(create=True)
        self.io.check_config()
        slog.log_start_run(self, what)

    def run(self, checkpoint=None):
        """ Run what cfg.mode says. The finetune and rank modes need the path
        of a checkpoint. """
        mode = self.cfg.mode
        if mode == "dirac_study":
            return self.run_dirac_study()
        elif mode in ("train", "ablate"):
            return self.run_training()
        if checkpoint is None:
            raise ConfigError("mode: {} needs a checkpoint".format(mode))
        checkpoint = self.resolve_checkpoint(checkpoint)
        if mode == "finetune":
            return self.run_finetune(checkpoint)
        return self.emit_rank_report(checkpoint)

    def resolve_checkpoint(self, checkpoint):
        """
        Path of the checkpoint file to start from.

        If checkpoint is the output folder of a training, its latest
        checkpoint of the cell given in [sd] with the first seed is used.

        """
        if not os.path.isdir(checkpoint):
            return checkpoint
        name = "{}_seed{}".format(self.cfg.cells()[0].name, self.cfg.seeds[0])
        source = IOHandler(Configuration(output_dir=checkpoint))
        path = source.get_latest_checkpoint(name)
        if path is None:
            raise ConfigError("checkpoint: no checkpoint of run {} in "
                              "{}".format(name, checkpoint))
        self.io.print_log("Using the latest checkpoint {}".format(path))
        return path

    # ------------- Dirac-GAN -------------#

    def run_dirac_study(self):
        """
        Simulate the Dirac-GAN and classify its stability.

        Writes to the dirac subfolder:

        - discrete_<name>.csv: gradient descent trajectories of the four
          combinations of with/without EMA (beta = 0 for without) and
          with/without SD (alpha = 0 for without).
        - ode_standard.csv, ode_sd.csv: continuous-time trajectories
          without and with the SD penalty.
        - stability.csv: Routh-Hurwitz classification on the grid of
          dirac.alpha_grid x dirac.eta_phi_grid.

        Returns
        -------
        paths : dict
            Name -> path of the written files.

        """
        self._prepare("Dirac-GAN study")
        d = self.cfg.dirac
        folder = self.io.get_subfolder("dirac")
        s0 = dirac.DiracState(*d.s0)
        columns = dirac.Trajectory.columns
        paths = {}

        variants = {
            "standard": (0., 0.),
            "ema": (0., d.beta),
            "sd_no_ema": (d.alpha, 0.),
            "sd_ema": (d.alpha, d.beta),
        }
        for name, (alpha, beta) in variants.items():
            traj = dirac.simulate_discrete(s0, d.params(alpha=alpha), d.steps,
                                           beta, update=d.update)
            paths["discrete_" + name] = self._write_trajectory(
                folder, "discrete_" + name, traj, columns, stride=1)

        for name, alpha in (("standard", 0.), ("sd", d.alpha)):
            traj = dirac.simulate_ode(s0, d.params(alpha=alpha), d.t_end, d.dt,
                                      integrator=d.integrator)
            paths["ode_" + name] = self._write_trajectory(
                folder, "ode_" + name, traj, columns, stride=d.csv_stride)

        reports = dirac.stability_sweep(d.params(), d.alpha_grid,
                                        d.eta_phi_grid)
        rows = []
        for report in reports:
            p = report.params
            real = report.eigenvalues.real
            imag = report.eigenvalues.imag
            rows.append([p.alpha, p.eta_phi, p.eta_G, p.eta_D, p.c,
                         *report.coefficients, report.margin,
                         report.expected_margin, report.routh_hurwitz_pass,
                         report.max_real_part, *real, *imag])
        paths["stability"] = os.path.join(folder, "stability.csv")
        self.io.write_csv(paths["stability"], STABILITY_COLUMNS, rows)
        n_pass = sum(r.routh_hurwitz_pass for r in reports)
        self.io.print_log("Stability sweep: {} of {} cells pass the "
                          "Routh-Hurwitz criterion".format(n_pass, len(reports)))
        return paths

    def _write_trajectory(self, folder, name, traj, columns, stride):
        rows = traj.to_rows()
        keep = np.arange(0, len(rows), stride)
        if keep[-1] != len(rows) - 1:
            keep = np.append(keep, len(rows) - 1)
        path = os.path.join(folder, name + ".csv")
        self.io.write_csv(path, columns, rows[keep])
        final = rows[-1]
        # theta amplitude over the last tenth separates cycles from decay
        line = "{}: {} steps, final radius {:.4g}, theta amplitude {:.4g}".format(
            name, len(rows) - 1, final[-1],
            dirac.amplitude(traj.theta, window=max(1, len(rows) // 10)))
        try:
            if dirac.check_converged(traj, CONVERGED_TOL):
                line += ", converged"
        except DivergenceError:
            line += " (diverged)"
            warnings.warn("Dirac simulation {} diverged".format(name))
        self.io.print_log(line)
        return path

    # ------------- Training -------------#

    def sd_spec(self, kind, alpha, augment, data_spec=None):
        if data_spec is None:
            data_spec = self.cfg.data.spec()
        return SdLossSpec(kind=kind, alpha=alpha,
                          feature_net=self.feature_net if kind == "feature"
                          else None,
                          augment=augment, data_scale=data_spec.scale)

    def get_optimizers(self):
        t = self.cfg.training
        return (get_optimizer(t.optimizer, t.lr_G, betas=t.adam_betas),
                get_optimizer(t.optimizer, t.lr_D, betas=t.adam_betas))

    def run_training(self):
        """
        Train every cell of the train or ablate mode for every seed.

        Runs that have a record in the train_log folder already are not
        repeated. Independent runs are distributed over cfg.threads worker
        processes. After all of them are done, summary.json is written.

        Returns
        -------
        records : List
            One logging.RunRecord per cell and seed.

        """
        self._prepare("training")
        tasks = [(cell, seed) for cell in self.cfg.cells()
                 for seed in self.cfg.seeds]
        self.io.print_log("Training {} cells x {} seeds".format(
            len(self.cfg.cells()), len(self.cfg.seeds)))

        records, failures = [], []

        def collect(cell, seed, get_record):
            try:
                records.append(get_record())
            except Exception as e:
                failures.append(e)
                self.io.print_log("Run {}_seed{} failed: {!r}".format(
                    cell.name, seed, e))

        if self.cfg.threads > 1 and len(tasks) > 1:
            cfg_dict = self.cfg.to_dict()
            with ProcessPoolExecutor(max_workers=self.cfg.threads) as pool:
                futures = [pool.submit(_train_cell_worker,
                                       (cfg_dict, asdict(cell), seed))
                           for cell, seed in tasks]
                for (cell, seed), future in zip(tasks, futures):
                    collect(cell, seed, lambda: slog.RunRecord.from_dict(
                        future.result()))
        else:
            for cell, seed in tasks:
                collect(cell, seed, lambda: self.train_cell(cell, seed))

        self.summarize()
        if failures:
            # the other runs are recorded, report the first failure
            raise failures[0]
        return records

    def train_cell(self, cell, seed):
        """
        Train one cell with one seed from scratch, or load its record if
        it has been trained already.

        Returns
        -------
        logging.RunRecord

        """
        name = "{}_seed{}".format(cell.name, seed)
        record_path = self.io.get_record_path(name, "json")
        if os.path.isfile(record_path):
            warnings.warn("Run {} exists already, skipping".format(name))
            return self.history.get_record(name)

        t = self.cfg.training
        data_spec = self.cfg.data.spec()
        run = TrainingRun.from_builder(
            self.builder, self.sd_spec(cell.kind, cell.alpha, cell.augment),
            data_spec, self.get_optimizers(), seed, t.batch_size, t.beta_ema,
            sd_interval=self.cfg.sd.interval, auto_alpha=self.cfg.sd.auto_alpha)
        return self._train_run(run, cell.name, t.steps)

    def _train_run(self, run, cell_name, n_steps):
        """
        Train a run for n_steps steps, evaluate, checkpoint and record it.

        The EMA generator is evaluated every eval_interval steps on the
        same real samples and latents. At every checkpoint fraction a
        checkpoint is saved and the outputs of the EMA generator on the
        fixed variance latents are added to the checkpoint series.

        """
        t = self.cfg.training
        start_time = time.time()
        seed = run.seed
        name = "{}_seed{}".format(cell_name, seed)
        record = slog.RunRecord(self.cfg.config_hash, cell_name, seed)
        latents = Rng(seed).spawn("variance").normal(
            (t.variance_latents, run.gen.input_dim))
        series = CheckpointSeries(latents, [], ())
        start = run.step
        end = start + n_steps
        checkpoint_steps = {}
        for fraction in t.checkpoint_fractions:
            step = start + max(1, int(round(fraction * n_steps)))
            checkpoint_steps.setdefault(step, fraction)

        def make_row(log=None, diverged=False):
            row = dict.fromkeys(slog.RECORD_COLUMNS)
            row["step"] = run.step
            row["diverged"] = int(diverged)
            if log is not None:
                row.update(loss_D=log.loss_D, loss_G_adv=log.loss_G_adv,
                           loss_SD=log.loss_SD, alpha=log.alpha)
            if not diverged:
                row.update(evaluate_generator(
                    run.ema.shadow, run.data_spec, self.feature_net,
                    Rng(seed).spawn("eval"), t.eval_samples, t.threshold_std))
            return row

        with open(self.io.get_record_path(name), "w") as f:
            logger = slog.CsvLogger(f, slog.RECORD_COLUMNS, self.cfg.config_hash)
            logger.level_file()

            def add_row(row):
                record.add_row(row)
                logger.write_line(row)
                f.flush()

            add_row(make_row())
            try:
                while run.step < end:
                    log = run.train_step()
                    if run.step in checkpoint_steps:
                        save_checkpoint(
                            self.io.get_checkpoint_path(name, run.step),
                            Checkpoint.from_run(run, self.builder))
                        series.append(forward_numpy(run.ema.shadow, latents),
                                      checkpoint_steps[run.step])
                    if (run.step - start) % t.eval_interval == 0 or \
                            run.step == end:
                        add_row(make_row(log))
            except DivergenceError as e:
                record.diverged = True
                record.message = str(e)
                run.step += 1
                add_row(make_row(diverged=True))
                warnings.warn("Run {} diverged: {}".format(name, e))

        if len(series.outputs) > 0:
            self.io.save_series(name, series)
        if len(series.outputs) >= 2:
            record.trajectory_variance = list(trajectory_variance(
                series, t.variance_distance, self.feature_net))
        record.wall_time = time.time() - start_time
        self.io.write_json(self.io.get_record_path(name, "json"),
                           record.to_dict())

        final = record.final_row()
        line = "{}: {} steps".format(name, run.step - start)
        if record.diverged:
            line += ", diverged"
        if final is not None:
            line += ", frechet_data {:.4g}, frechet_feature {:.4g}, modes " \
                    "{}".format(final["frechet_data"], final["frechet_feature"],
                                final["modes_hit"])
        self.io.print_log(line)
        return record

    def summarize(self):
        """ Write summary.json with the per-cell statistics of all records. """
        summarizer = Summarizer(self.cfg.output_folder)
        path = summarizer.write_summary()
        self.io.print_log("Summary written to {}".format(path))
        return path

    # ------------- Fine-tuning -------------#

    def run_finetune(self, checkpoint_path):
        """
        Continue the training of a checkpoint.

        G, D and the EMA generator are initialized from the checkpoint,
        the data can be changed with finetune.data. If finetune.compare is
        true, every seed is trained both with alpha = 0 and with sd.alpha.
        For the seed of the checkpoint, the states of the random streams
        and of the optimizers are restored, so that the training continues
        exactly where it stopped.

        Returns
        -------
        records : List
            One logging.RunRecord per variant and seed.

        """
        self._prepare("fine-tuning of {}".format(checkpoint_path))
        checkpoint = load_checkpoint(checkpoint_path)
        t, sd = self.cfg.training, self.cfg.sd
        data_spec = self.cfg.finetune_data_spec()
        alphas = [sd.alpha]
        if self.cfg.finetune.compare and sd.alpha != 0:
            alphas = [0., sd.alpha]

        records = []
        for seed in self.cfg.seeds:
            for alpha in alphas:
                cell = Cell.make(sd.kind, alpha, sd.augment)
                gen, disc, ema = warm_start(checkpoint, self.builder, t.beta_ema)
                run = TrainingRun(
                    gen, disc, ema,
                    self.sd_spec(sd.kind, alpha, sd.augment, data_spec),
                    data_spec, self.get_optimizers(), seed, t.batch_size,
                    step=checkpoint.step, sd_interval=sd.interval,
                    auto_alpha=sd.auto_alpha)
                if seed == checkpoint.seed:
                    if checkpoint.rng is not None:
                        run.set_rng_state(checkpoint.rng)
                    if checkpoint.optimizer is not None:
                        run.set_optimizer_state(checkpoint.optimizer)
                        self._keep_configured_lr(run)
                records.append(self._train_run(
                    run, "finetune-" + cell.name, self.cfg.finetune.steps))
        self.summarize()
        return records

    def _keep_configured_lr(self, run):
        """ Restored optimizer states keep the learning rates of the config. """
        t = self.cfg.training
        for net, opt, lr in (("G", run.opts[0], t.lr_G),
                             ("D", run.opts[1], t.lr_D)):
            if opt.lr != lr:
                self.io.print_log(
                    "Learning rate of {} changed from {} (checkpoint) to {} "
                    "(config)".format(net, opt.lr, lr))
                opt.lr = lr

    # ------------- Ranking -------------#

    def emit_rank_report(self, checkpoint_path):
        """
        Rank samples of a checkpoint by SD distance and D score.

        For every seed, writes to the reports subfolder:

        - rank_seed<seed>.csv: latent_index, sd_distance, d_score, group
          of every sampled latent (group n/a if not selected).
        - rank_extremes_seed<seed>.csv: the selected samples with their
          2-D coordinates.

        Returns
        -------
        reports : List
            One metrics.RankReport per seed.

        """
        self._prepare("rank report of {}".format(checkpoint_path))
        checkpoint = load_checkpoint(checkpoint_path)
        gen, disc, ema = warm_start(checkpoint, self.builder,
                                    self.cfg.training.beta_ema)
        r, sd = self.cfg.rank, self.cfg.sd
        spec = self.sd_spec(sd.kind, sd.alpha, False)
        folder = self.io.get_subfolder("reports")

        reports = []
        for seed in self.cfg.seeds:
            report = rank_joint_extremes(gen, ema.shadow, disc, r.n_latents, r.k,
                                         spec, Rng(seed).spawn("rank"),
                                         k_inner=r.k_inner)
            tags = report.tags()
            rows = [(i, report.sd_distance[i], report.d_score[i], tags[i])
                    for i in range(len(tags))]
            self.io.write_csv(
                os.path.join(folder, "rank_seed{}.csv".format(seed)),
                ("latent_index", "sd_distance", "d_score", "group"), rows)
            self.io.write_csv(
                os.path.join(folder, "rank_extremes_seed{}.csv".format(seed)),
                ("latent_index", "sd_distance", "d_score", "group", "x", "y"),
                report.selected_rows())
            self.io.print_log("Rank report for seed {}: {} latents, {} "
                              "selected".format(seed, r.n_latents,
                                                len(report.selected_rows())))
            reports.append(report)
        return reports


STABILITY_COLUMNS = (
    "alpha", "eta_phi", "eta_G", "eta_D", "c", "a3", "a2", "a1", "a0",
    "margin", "expected_margin", "routh_pass", "max_re", "re_1", "re_2",
    "re_3", "im_1", "im_2", "im_3")
