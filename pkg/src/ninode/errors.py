"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition (dimension mismatch,
    non-scalar loss, non-skew input, ...)."""


class InvalidInputError(ContractError):
    """Input contains non-finite entries."""


class NumericError(RuntimeError):
    """A numeric failure (NaN/Inf) surfaced during computation.

    ``op_index`` locates the offending recorded operation when the failure
    happened inside a tape backward pass.
    """

    def __init__(self, message: str, op_index: int | None = None):
        super().__init__(message)
        self.op_index = op_index


class CertificationError(RuntimeError):
    """A structural certificate could not be established or was violated."""


class DivergenceError(RuntimeError):
    """A simulated trajectory left the admissible region.

    Carries the time and step index at which divergence was detected.
    """

    def __init__(self, message: str, t: float, step: int):
        super().__init__(message)
        self.t = t
        self.step = step


class ConfigError(ValueError):
    """An experiment configuration failed to parse or validate.

    ``field`` is a dotted path ("train.steps") or a line diagnostic for
    malformed JSON.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
