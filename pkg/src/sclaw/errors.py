"""Error taxonomy shared across the package.

Three failure classes map onto the CLI exit codes: bad configuration
documents (exit 2), numerical failures during a run (exit 3), and an
infeasible rate target (exit 4, signalled by a sentinel rather than an
exception).  Precondition violations in library calls raise plain
ValueError.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """A configuration document is malformed: unknown key, missing key,
    or a value outside its admissible range.  The message names the
    offending key path, e.g. ``missing key: harness.iota``."""


class NumericalFailure(RuntimeError):
    """A solver produced a non-finite value or violated its stability
    certificate.  Carries enough context (path index, step) to locate
    the failing sample."""

    def __init__(self, message: str, path_index: int | None = None,
                 step: int | None = None):
        super().__init__(message)
        self.path_index = path_index
        self.step = step
