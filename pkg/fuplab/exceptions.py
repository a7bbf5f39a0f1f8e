"""Exceptions for the fuplab numerical laboratory."""


class FupLabError(Exception):
    """fuplab exception."""

    pass


class FupLabConfigError(FupLabError):
    """fuplab configuration exception."""

    pass


class FupLabRangeError(FupLabError):
    """fuplab parameter range exception."""

    pass


class FupLabFormatError(FupLabError):
    """fuplab file format exception."""

    pass


class FupLabConvergenceError(FupLabError):
    """fuplab iteration budget exception."""

    pass


class FupLabResolutionError(FupLabError):
    """fuplab sample resolution exception."""

    def __init__(self, message: str, required: int = 0):
        super().__init__(message)
        self.required = required


class FupLabStageError(FupLabError):
    """fuplab pipeline stage exception."""

    pass
