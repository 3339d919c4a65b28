"""Exception hierarchy. Every error carries a short machine-readable ``code``."""


class GeomanError(Exception):
    code = "GEOMAN_ERROR"


class ValidationError(GeomanError, ValueError):
    code = "VALIDATION"


class RangeError(GeomanError, ValueError):
    code = "OUT_OF_RANGE"


class DegenerateError(GeomanError, ValueError):
    code = "DEGENERATE"


class ModalityError(GeomanError, ValueError):
    code = "MODALITY"


class SequenceIOError(GeomanError, OSError):
    code = "SEQUENCE_IO"


class DivergenceError(GeomanError, RuntimeError):
    code = "DIVERGENCE"

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class ConfigError(GeomanError, ValueError):
    code = "CONFIG"
