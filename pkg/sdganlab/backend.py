#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Code for training the SD-GAN, one step at a time.
"""

from dataclasses import dataclass, asdict

import numpy as np

import sdganlab.tensor as T
from sdganlab.datasets import sample_data
from sdganlab.exceptions import DivergenceError, ShapeError
from sdganlab.losses import discriminator_loss, generator_adv_loss, sd_loss
from sdganlab.networks import EmaTracker, MlpParams, forward_mlp, forward_numpy
from sdganlab.rng import Rng

# decay of the running mean of the adversarial loss used by auto_alpha
AUTO_ALPHA_DECAY = 0.99


@dataclass
class StepLog:
    """
    What happened in one training step.

    loss_SD is nan if no SD loss spec was given. If sd_applied is False,
    loss_SD was computed on the detached generator output for monitoring
    only.

    """
    step: int
    loss_D: float
    loss_G_adv: float
    loss_SD: float
    alpha: float
    sd_applied: bool
    grad_norm_G: float
    grad_norm_D: float
    grad_norm_teacher: float

    def as_dict(self):
        return asdict(self)


def _check_finite(loss, name, step):
    value = loss.item()
    if not np.isfinite(value):
        raise DivergenceError("{} is {} in step {}".format(name, value, step))
    return value


def train_step(gen, disc, ema, batch_real, spec, opts, rng, aug_rng=None,
               alpha=None, step=0):
    """
    One discriminator step, one generator step and the EMA update.

    Parameters
    ----------
    gen : MlpParams
        The generator, updated in place.
    disc : MlpParams
        The discriminator, updated in place.
    ema : EmaTracker
        EMA copy of the generator, the teacher.
    batch_real : ndarray
        Batch of real samples, shape (batch, 2).
    spec : SdLossSpec or None
        If None, the SD loss is not computed at all.
    opts : tuple
        Optimizers (opt_G, opt_D).
    rng : sdganlab.rng.Rng
        Stream for the latent vectors.
    aug_rng : sdganlab.rng.Rng, optional
        Stream for the augmentations of the SD loss. Defaults to rng,
        which makes the latent vectors depend on whether the SD loss is
        computed.
    alpha : float, optional
        Weight of the SD loss in this step, defaults to spec.alpha.
        With alpha = 0, the SD loss is only monitored.
    step : int
        Number of this step, used in the log and in error messages.

    Returns
    -------
    StepLog

    """
    opt_G, opt_D = opts
    if aug_rng is None:
        aug_rng = rng
    batch_real = np.asarray(batch_real, dtype=np.float64)
    n = len(batch_real)
    latent_dim = gen.input_dim
    gen_params, disc_params = gen.parameters(), disc.parameters()

    # discriminator step, on fakes from the current generator
    z = rng.normal((n, latent_dim))
    fake = forward_numpy(gen, z)
    if not np.all(np.isfinite(fake)):
        raise DivergenceError("Generator output is not finite in step "
                              "{}".format(step))
    fake = T.constant(fake)
    T.zero_grad(disc_params)
    loss_D = discriminator_loss(forward_mlp(disc, T.constant(batch_real)),
                                forward_mlp(disc, fake))
    loss_D_value = _check_finite(loss_D, "loss_D", step)
    T.backward(loss_D)
    grad_norm_D = T.grad_norm(disc_params)
    opt_D.step(disc_params)

    # generator step, the teacher sees the same latents as the student
    z = T.constant(rng.normal((n, latent_dim)))
    student = forward_mlp(gen, z)
    teacher = T.detach(forward_mlp(ema.shadow, z))
    T.zero_grad(gen_params + disc_params + ema.parameters())
    loss_G_adv = generator_adv_loss(forward_mlp(disc, student))
    loss_G = loss_G_adv

    if spec is None:
        alpha, sd_applied, loss_SD_value = 0., False, float("nan")
    else:
        if alpha is None:
            alpha = spec.alpha
        sd_applied = alpha > 0
        if sd_applied:
            loss_SD = sd_loss(student, teacher, spec, aug_rng)
            loss_G = T.add(loss_G_adv, T.scale(loss_SD, alpha))
        else:
            loss_SD = sd_loss(T.detach(student), teacher, spec, aug_rng)
        loss_SD_value = _check_finite(loss_SD, "loss_SD", step)

    loss_G_adv_value = _check_finite(loss_G_adv, "loss_G_adv", step)
    _check_finite(loss_G, "loss_G", step)
    T.backward(loss_G)
    grad_norm_G = T.grad_norm(gen_params)
    grad_norm_teacher = T.grad_norm(ema.parameters())
    opt_G.step(gen_params)

    ema.update(gen)

    return StepLog(step=step, loss_D=loss_D_value, loss_G_adv=loss_G_adv_value,
                   loss_SD=loss_SD_value, alpha=float(alpha),
                   sd_applied=sd_applied, grad_norm_G=grad_norm_G,
                   grad_norm_D=grad_norm_D, grad_norm_teacher=grad_norm_teacher)


class TrainingRun:
    """
    Everything that changes during the training of one seed of one cell.

    The random numbers come from independent sub-streams of the seed:
    init (network weights), data (real batches), latent (latent vectors of
    the training steps) and augment (SD augmentations). Because of this,
    the augmentations never shift the latent vectors.

    Attributes
    ----------
    gen, disc : MlpParams
    ema : EmaTracker
    spec : SdLossSpec or None
    data_spec : sdganlab.datasets.DataSpec
    opts : tuple
        (opt_G, opt_D).
    seed : int
    batch_size : int
    step : int
        Number of completed steps.
    sd_interval : int
        The SD loss enters the generator objective every sd_interval-th
        step, it is monitored in the other steps.
    auto_alpha : bool
        Scale alpha by ln(2) / running mean of loss_G_adv.

    """
    def __init__(self, gen, disc, ema, spec, data_spec, opts, seed,
                 batch_size, step=0, sd_interval=1, auto_alpha=False):
        if sd_interval < 1:
            raise ValueError("sd_interval must be >= 1, got {}".format(
                sd_interval))
        self.gen = gen
        self.disc = disc
        self.ema = ema
        self.spec = spec
        self.data_spec = data_spec
        self.opts = tuple(opts)
        self.seed = int(seed)
        self.batch_size = int(batch_size)
        self.step = int(step)
        self.sd_interval = int(sd_interval)
        self.auto_alpha = bool(auto_alpha)
        self.adv_running_mean = float(np.log(2.))

        root = Rng(self.seed)
        self.rngs = {name: root.spawn(name)
                     for name in ("data", "latent", "augment")}

    @classmethod
    def from_builder(cls, builder, spec, data_spec, opts, seed, batch_size,
                     beta, **kwargs):
        """ Freshly initialized networks, drawn from the init stream. """
        init_rng = Rng(seed).spawn("init")
        gen = builder.build_generator(init_rng)
        disc = builder.build_discriminator(init_rng)
        return cls(gen, disc, EmaTracker(beta, source=gen), spec, data_spec,
                   opts, seed, batch_size, **kwargs)

    def current_alpha(self):
        """ Weight of the SD loss in the upcoming step. """
        if self.spec is None:
            return 0.
        if (self.step + 1) % self.sd_interval != 0:
            return 0.
        alpha = self.spec.alpha
        if self.auto_alpha:
            alpha *= np.log(2.) / self.adv_running_mean
        return float(alpha)

    def train_step(self):
        batch = sample_data(self.data_spec, self.rngs["data"], self.batch_size)
        log = train_step(self.gen, self.disc, self.ema, batch, self.spec,
                         self.opts, self.rngs["latent"],
                         aug_rng=self.rngs["augment"],
                         alpha=self.current_alpha(), step=self.step + 1)
        self.step += 1
        self.adv_running_mean = AUTO_ALPHA_DECAY * self.adv_running_mean + \
            (1. - AUTO_ALPHA_DECAY) * log.loss_G_adv
        return log

    def rng_state(self):
        return {name: rng.get_state() for name, rng in self.rngs.items()}

    def set_rng_state(self, state):
        for name, rng in self.rngs.items():
            rng.set_state(state[name])

    def optimizer_state(self):
        return {"G": self.opts[0].state_dict(), "D": self.opts[1].state_dict()}

    def set_optimizer_state(self, state):
        self.opts[0].load_state_dict(state["G"])
        self.opts[1].load_state_dict(state["D"])


def train_model(run, n_steps, callback=None):
    """
    Train for n_steps steps.

    Parameters
    ----------
    run : TrainingRun
    n_steps : int
    callback : function, optional
        Called with (run, step_log) after every step.

    Returns
    -------
    StepLog or None
        The log of the last step.

    """
    log = None
    for _ in range(n_steps):
        log = run.train_step()
        if callback is not None:
            callback(run, log)
    return log


def warm_start(checkpoint, builder, beta):
    """
    Networks of a checkpoint, for continuing the training.

    Parameters
    ----------
    checkpoint : sdganlab.in_out.Checkpoint
    builder : sdganlab.model_builder.ModelBuilder
        The configured architecture. The checkpoint has to match it.
    beta : float
        EMA decay of the returned tracker.

    Returns
    -------
    gen, disc : MlpParams
    ema : EmaTracker
        Its shadow is the EMA generator of the checkpoint, or a copy of
        the generator if the checkpoint has none.

    """
    builder.check_architecture(checkpoint.architecture)
    activation = checkpoint.architecture["activation"]
    gen = MlpParams.from_arrays(checkpoint.generator, activation)
    disc = MlpParams.from_arrays(checkpoint.discriminator, activation)
    builder_dims = (builder.generator_layers, builder.discriminator_layers)
    for net, dims in zip((gen, disc), builder_dims):
        if net.dims != list(dims):
            raise ShapeError("Network widths {} do not match the configured "
                             "{}".format(net.dims, dims))
    if checkpoint.ema is None:
        ema = EmaTracker(beta, source=gen)
    else:
        ema = EmaTracker(beta, source=gen, shadow=MlpParams.from_arrays(
            checkpoint.ema, activation))
    return gen, disc, ema
