"""Exception hierarchy.

Input problems (bad files, mismatched topologies, bad configuration) derive
from :class:`InputError`; problems that only show up while computing (a face
collapsing, a matrix logarithm that does not exist) derive from
:class:`NumericalError`. The CLI maps the two families to exit codes 1 and 2.
"""


class ElasticError(Exception):
    """Base class for all package errors."""


class InputError(ElasticError):
    pass


class MeshFormatError(InputError):
    pass


class TopologyMismatchError(InputError):
    pass


class ConfigError(InputError):
    pass


class NumericalError(ElasticError):
    pass


class DegenerateFaceError(NumericalError):
    """A face has (numerically) zero area or a non positive-definite metric."""

    def __init__(self, message, face=None, step=None):
        super().__init__(message)
        self.face = face
        self.step = step
