"""Exception hierarchy.

UsageError means the caller broke a precondition (bad shapes, bad flags);
DomainError means the math itself is undefined on the given input (zero
norms); DataError covers everything wrong with files and datasets.
"""


class FgmatchError(Exception):
    pass


class UsageError(FgmatchError):
    pass


class DomainError(FgmatchError):
    pass


class DataError(FgmatchError):
    pass


class StoreError(DataError):
    pass


class BadMagicError(StoreError):
    pass


class VersionError(StoreError):
    pass


class TruncatedError(StoreError):
    pass


class DuplicateIdError(StoreError):
    pass


class InvalidRecordError(StoreError):
    pass


class ManifestError(DataError):
    pass


class CheckpointError(DataError):
    pass


class TrainingError(FgmatchError):
    pass


class NonFiniteGradientError(TrainingError):
    def __init__(self, param_name: str):
        super().__init__(f"non-finite gradient in parameter block '{param_name}'")
        self.param_name = param_name
