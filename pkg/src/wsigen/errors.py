"""Exception hierarchy shared across the engine.

The CLI maps these onto exit codes: invalid parameters and shape
mismatches are usage errors (1), numerical failures are 2, and storage
problems are 3.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameter(EngineError, ValueError):
    """A configuration or argument violates a documented precondition."""


class ShapeMismatch(InvalidParameter):
    """Array shapes are incompatible with the requested operation."""


class NumericalFailure(EngineError):
    """A non-finite value appeared inside a denoising trajectory.

    Carries enough context (step, stage, iteration, patch) to locate the
    failing patch in a multi-stage run.
    """

    def __init__(self, message: str, *, step: int | None = None,
                 stage: int | None = None, iteration: int | None = None,
                 patch: tuple[int, int] | None = None):
        self.step = step
        self.stage = stage
        self.iteration = iteration
        self.patch = patch
        super().__init__(message)

    def __str__(self) -> str:
        ctx = [f"{k}={v}" for k, v in (("stage", self.stage),
                                       ("iteration", self.iteration),
                                       ("patch", self.patch),
                                       ("step", self.step)) if v is not None]
        base = super().__str__()
        return f"{base} [{', '.join(ctx)}]" if ctx else base


class CoverageError(EngineError):
    """Stitching received a patch set that does not cover the image."""


class PyramidIOError(EngineError, OSError):
    """Reading or writing the on-disk pyramid failed."""


class VerificationError(PyramidIOError):
    """A stored pyramid does not match its manifest."""
