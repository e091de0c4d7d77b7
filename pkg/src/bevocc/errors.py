class ShapeError(ValueError):
    """Operand shapes are inconsistent with an operation's contract."""


class ConfigError(ValueError):
    """A pipeline configuration violates a width or geometry invariant."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


class DataFormatError(ValueError):
    """A fixture file is malformed; reports the file and byte offset."""

    def __init__(self, path, offset, message):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{self.path}: offset {offset}: {message}")


class DivergenceError(RuntimeError):
    def __init__(self, step, loss):
        self.step = step
        self.loss = loss
        super().__init__(f"training diverged at step {step} (loss={loss})")
