"""Exception types shared across the package."""


class PifiError(Exception):
    """Base class for package errors."""


class ShapeError(PifiError):
    """Operand shapes are incompatible."""


class ContractError(PifiError):
    """An operation was called outside its contract."""


class ConfigError(PifiError):
    """A configuration is internally inconsistent or unsupported."""


class ArchiveFormatError(PifiError):
    """A tensor archive failed validation; the message names the field."""


class ExtractionError(PifiError):
    """Layer extraction was asked for something the archive does not have."""


class IngestionError(PifiError):
    """A data file could not be parsed; the message carries the line number."""


class TrainingDiverged(PifiError):
    """Loss became non-finite; carries step/lr/grad-norm diagnostics."""

    def __init__(self, message, step=None, epoch=None, lr=None, grad_norms=None):
        super().__init__(message)
        self.step = step
        self.epoch = epoch
        self.lr = lr
        self.grad_norms = grad_norms or {}
