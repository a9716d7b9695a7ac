"""Exception hierarchy shared by all modules."""


class SeisError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(SeisError, ValueError):
    """Invalid modelling, processing or training parameters."""


class GeometryError(ConfigError):
    """Inconsistent survey geometry, or a position outside the model."""


class ShapeError(SeisError, ValueError):
    """Array or volume shapes that do not agree."""


class SizeError(ShapeError):
    """Data too small for the requested patch or window."""


class DegenerateInputError(SeisError, ValueError):
    """Input that makes the computation undefined (zero variance, zero energy)."""


class FormatError(SeisError, ValueError):
    """Malformed file; the message names the offending field."""


class ManifestError(ConfigError):
    """Unparseable manifest, unknown stage or missing input."""


class TrainingDivergedError(SeisError, RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss
