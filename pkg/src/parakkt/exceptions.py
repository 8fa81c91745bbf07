"""Exception hierarchy for parakkt.

Every error raised by the package derives from :class:`ParakktError`, so
callers (in particular the command line front end) can map failures to a
small set of outcome classes.
"""


class ParakktError(Exception):
    """Base class for all package errors."""


class GrammarError(ParakktError):
    """Malformed expression source or use of a name that is not in scope."""


class ConfigError(ParakktError):
    """Invalid problem definition, grid sizes, or run configuration."""


class CatalogError(ConfigError):
    """Unknown built-in problem name."""


class AuditError(ParakktError):
    """A hypothesis audit could not be completed or failed hard.

    Carries the name of the offending map and the sample point whenever the
    failure is attributable to a single evaluation.
    """


class HypothesisViolationError(ParakktError):
    """A declared structural bound was contradicted at run time.

    Raised for example when the constraint slope drops below half of the
    declared lower bound, or when no constraint boundary exists along the
    control axis at some node.
    """


class AssemblyError(ParakktError):
    """Non-finite coefficient data encountered during operator assembly."""


class SolveError(ParakktError):
    """A linear or nonlinear solve failed (divergence, singular step matrix)."""


class OracleError(ParakktError):
    """The dense optimality oracle failed (size guard, cycling, singular KKT)."""


class FieldIOError(ParakktError):
    """Malformed field file: bad header, dimension mismatch, non-finite entry."""


class ProblemIOError(ConfigError):
    """Malformed problem definition file."""
