"""Shared exception types."""


class ShapeError(ValueError):
    """Incompatible operand shapes, tagged with the op that rejected them."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        detail = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {detail}")


class ConfigError(ValueError):
    """Invalid run configuration; carries every violation found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(
            "invalid config:\n" + "\n".join(f"  - {v}" for v in self.violations)
        )


class CheckpointError(RuntimeError):
    pass


class NonFiniteGradientError(RuntimeError):
    """Raised when an optimizer sees a NaN/Inf gradient; names the parameter."""

    def __init__(self, param_path: str):
        self.param_path = param_path
        super().__init__(f"non-finite gradient in parameter {param_path!r}")


class EnvError(RuntimeError):
    pass
