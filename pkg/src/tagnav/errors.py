"""Exception types shared by every stage of the pipeline.

Each exception carries a short ``kind`` label used in CLI diagnostics and in
gap records, and an ``exit_code`` the command line front end maps to.
"""


class TagNavError(Exception):
    kind = "Error"
    exit_code = 3

    def __str__(self):
        msg = super().__str__()
        return f"{self.kind}: {msg}" if msg else self.kind


# -- usage / parameter errors (exit 1) -------------------------------------
class InvalidParameterError(TagNavError, ValueError):
    kind = "Invalid-Parameter"
    exit_code = 1


class InvalidSpecError(InvalidParameterError):
    kind = "Invalid-Spec"


# -- input errors (exit 2) --------------------------------------------------
class InputError(TagNavError, ValueError):
    kind = "Input-Error"
    exit_code = 2


class ParseError(InputError):
    kind = "Parse-Error"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ParseError):
    kind = "Schema-Error"


class UnknownMarkerIdError(InputError):
    kind = "Unknown-Marker-Id"

    def __init__(self, marker_id):
        self.marker_id = marker_id
        super().__init__(f"marker id {marker_id} is not in the marker map")


class DimensionMismatchError(InputError):
    kind = "Dimension-Mismatch"


class EmptyTrajectoryError(InputError):
    kind = "Empty-Trajectory"


class EmptyInputError(InputError):
    kind = "Empty-Input"


class TooFewSamplesError(InputError):
    kind = "Too-Few-Samples"


class TooFewFramesError(InputError):
    kind = "Too-Few-Frames"


class NonUniformSamplingError(InputError):
    kind = "Non-Uniform-Sampling"


class OutOfRoomError(InputError):
    kind = "Out-Of-Room"


# -- numerical errors (exit 3) ----------------------------------------------
class NumericalError(TagNavError, ArithmeticError):
    kind = "Numerical-Error"
    exit_code = 3


class NonFiniteError(NumericalError, ValueError):
    kind = "Non-Finite"


class BehindCameraError(NumericalError, ValueError):
    kind = "Behind-Camera"


class InsufficientPointsError(NumericalError):
    kind = "Insufficient-Points"


class DegenerateConfigurationError(NumericalError):
    kind = "Degenerate-Configuration"


class StageError(TagNavError):
    """Wraps an error raised inside one experiment stage."""

    kind = "Stage-Error"

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3)
        super().__init__(f"[{stage}] {cause}")

    def __str__(self):
        return Exception.__str__(self)
