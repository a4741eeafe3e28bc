"""
Seedable random streams.
"""

import zlib
import numpy as np


class Rng:
    """
    Deterministic random number stream based on numpy's PCG64.

    The same seed (and stream key) gives the same sequence on every
    platform. Independent sub-streams are derived by name with spawn, so
    that e.g. the augmentations of the distillation loss never shift the
    latent samples of the training loop.

    Attributes
    ----------
    seed : int
        The root seed.
    stream : tuple
        Key of this sub-stream below the root seed. Empty for the root.

    """
    def __init__(self, seed, stream=()):
        self.seed = int(seed)
        self.stream = tuple(int(key) for key in stream)
        seed_seq = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self._generator = np.random.Generator(np.random.PCG64(seed_seq))

    def spawn(self, name):
        """ Get the independent sub-stream with the given name. """
        key = zlib.crc32(name.encode("utf-8"))
        return Rng(self.seed, self.stream + (key, ))

    def normal(self, shape, loc=0., scale=1.):
        return self._generator.normal(loc, scale, size=shape)

    def uniform(self, low, high, shape=None):
        return self._generator.uniform(low, high, size=shape)

    def integers(self, low, high, shape=None):
        return self._generator.integers(low, high, size=shape)

    def random(self, shape=None):
        return self._generator.random(size=shape)

    def permutation(self, n):
        return self._generator.permutation(n)

    def get_state(self):
        """ The full state as a json-compatible dict. """
        return {
            "seed": self.seed,
            "stream": list(self.stream),
            "bit_generator": self._generator.bit_generator.state,
        }

    def set_state(self, state):
        if state["seed"] != self.seed or tuple(state["stream"]) != self.stream:
            raise ValueError("Can not set rng state: state of stream {}/{} "
                             "given to stream {}/{}".format(
                                 state["seed"], state["stream"],
                                 self.seed, list(self.stream)))
        self._generator.bit_generator.state = state["bit_generator"]

    @classmethod
    def from_state(cls, state):
        rng = cls(state["seed"], state["stream"])
        rng.set_state(state)
        return rng
