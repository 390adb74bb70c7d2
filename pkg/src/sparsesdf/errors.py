"""Exception hierarchy.

Every error raised by the package derives from :class:`ReconstructionError`.
The CLI maps the two broad families to exit codes: input problems exit 3,
numerical failures exit 4.
"""


class ReconstructionError(Exception):
    exit_code = 3


class InputError(ReconstructionError):
    exit_code = 3


class NumericalError(ReconstructionError):
    exit_code = 4


# geometry
class OutOfBounds(InputError):
    pass


class BehindCamera(NumericalError):
    pass


class DegenerateParallel(NumericalError):
    pass


class DegenerateBaseline(NumericalError):
    pass


class IllConditioned(NumericalError):
    pass


# file ingestion
class ParseError(InputError):
    def __init__(self, line: int, message: str = ""):
        self.line = line
        super().__init__(f"line {line}: {message}" if message else f"line {line}")


class UnknownView(InputError):
    pass


class MissingInput(InputError):
    pass


# priors
class AllUncertain(NumericalError):
    pass


# field / renderer
class InvalidInput(InputError):
    pass


class InvalidBeta(InputError):
    pass


class InvalidRange(InputError):
    pass


class CheckpointMismatch(InputError):
    pass


# losses / training
class ShapeError(InputError):
    pass


class InvalidPrior(InputError):
    pass


class Degenerate(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass


# synthetic scenes
class UnknownScene(InputError):
    pass


class InvalidScene(InputError):
    pass


class InvalidCamera(InputError):
    pass


class TooFewViews(InputError):
    pass


class NoOverlap(NumericalError):
    pass


# meshing / evaluation
class EmptyMesh(NumericalError):
    pass


class EmptyCloud(NumericalError):
    pass


# command line
class UsageError(ReconstructionError):
    exit_code = 2


class IoError(InputError):
    pass
