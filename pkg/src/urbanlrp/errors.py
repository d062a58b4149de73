"""Exception types raised across the package."""


class SchemaError(ValueError):
    """Metadata file lacks a required column."""


class LabelError(ValueError):
    """A class id falls outside the known label set."""


class WavFormatError(ValueError):
    """Unsupported or malformed RIFF/WAVE content."""


class TruncatedFileError(OSError):
    """A binary file ended before its declared payload."""


class ParameterError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class ArchitectureError(ValueError):
    """Input or layer shapes do not compose."""


class CheckpointFormatError(ValueError):
    """Bad magic or version in a model checkpoint."""


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, batch):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class PropagationError(ArithmeticError):
    """Relevance reached a unit whose redistribution weights are all zero."""


class StructureError(ValueError):
    """Network layout cannot be converted for relevance analysis."""
