from typing import Optional, Tuple


class WeightSpaceError(Exception):
    """Base class for every error raised by the toolkit."""


class ShapeError(WeightSpaceError, ValueError):
    def __init__(
        self,
        message: str,
        *,
        layer: Optional[int] = None,
        expected: Optional[Tuple[int, ...]] = None,
        actual: Optional[Tuple[int, ...]] = None,
    ) -> None:
        super().__init__(message)
        self.layer = layer
        self.expected = expected
        self.actual = actual


class FinitenessError(WeightSpaceError, ValueError):
    def __init__(
        self, message: str, *, layer: int, tensor: str, index: Tuple[int, ...]
    ) -> None:
        super().__init__(message)
        self.layer = layer
        self.tensor = tensor
        self.index = index


class DivergenceError(WeightSpaceError, ArithmeticError):
    def __init__(self, step: int, loss: float) -> None:
        super().__init__(f"Training diverged at step {step} (loss={loss!r})")
        self.step = step
        self.loss = loss


class AlignmentSizeError(WeightSpaceError, ValueError):
    pass


class ConfigError(WeightSpaceError, ValueError):
    def __init__(self, message: str, *, key: Optional[str] = None) -> None:
        super().__init__(message)
        self.key = key


class DatasetBuildError(WeightSpaceError):
    def __init__(self, object_id: int, view_id: int, cause: BaseException) -> None:
        super().__init__(f"Fit for object {object_id} view {view_id} failed: {cause}")
        self.object_id = object_id
        self.view_id = view_id


class FormatError(WeightSpaceError, ValueError):
    pass


class ChecksumError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class VersionMismatchError(FormatError):
    def __init__(self, found: int, expected: int) -> None:
        super().__init__(
            f"Unsupported WSDS format version {found} "
            f"(this toolkit reads version {expected})"
        )
        self.found = found
        self.expected = expected


class AugmentationError(WeightSpaceError, ValueError):
    pass


class LabelError(WeightSpaceError, ValueError):
    pass


class EmptyDatasetError(WeightSpaceError, ValueError):
    pass


class OrchestrationError(WeightSpaceError):
    """The Temporal server could not be reached."""
