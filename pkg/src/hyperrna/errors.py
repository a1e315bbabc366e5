"""Exception types raised across the pipeline."""


class HyperRNAError(Exception):
    """Base class for all package errors."""


class DataError(HyperRNAError):
    """Input data could not be used (exit code 2 at the command line)."""


class MalformedCoordinate(DataError):
    pass


class EmptyStructure(DataError):
    pass


class EmptyBackbone(DataError):
    pass


class InvalidAlphabet(DataError):
    pass


class DegenerateGraph(DataError):
    pass


class DegenerateTorsion(DataError):
    pass


class EmptyInput(DataError):
    pass


class IdMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class LengthMismatch(HyperRNAError, ValueError):
    pass


class ShapeMismatch(HyperRNAError, ValueError):
    pass


class NotScalar(HyperRNAError, ValueError):
    pass


class SingularDegree(HyperRNAError, ValueError):
    pass


class StepOutOfRange(HyperRNAError, IndexError):
    pass


class NonPositiveTemperature(HyperRNAError, ValueError):
    pass


class NonFiniteLoss(HyperRNAError, FloatingPointError):
    def __init__(self, structure_id, value):
        super().__init__(f"non-finite loss {value!r} on structure {structure_id!r}")
        self.structure_id = structure_id
        self.value = value


class TooFewPoints(HyperRNAError, ValueError):
    pass


class TooFewSamples(HyperRNAError, ValueError):
    pass


class DegenerateConfiguration(HyperRNAError, ValueError):
    pass
