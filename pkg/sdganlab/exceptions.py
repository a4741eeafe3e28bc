"""
Exceptions raised by sdganlab.
"""


class ShapeError(ValueError):
    """ Shapes of operands, networks or stored arrays do not conform. """


class DivergenceError(ArithmeticError):
    """ A loss, gradient or state became non-finite. """


class ConfigError(ValueError):
    """ Invalid experiment configuration. The message names the offending key path. """


class CheckpointError(ValueError):
    """ A checkpoint can not be read. """


class CheckpointFormatError(CheckpointError):
    """ The checkpoint document is malformed. """


class CheckpointVersionError(CheckpointError):
    """ The checkpoint was written with a different format version. """


class CheckpointShapeError(CheckpointError, ShapeError):
    """ Stored parameter shapes do not match the architecture. """
