"""Exception hierarchy shared by every module."""


class MigrationError(Exception):
    """Base class for all errors raised by the package."""


class AuthFailure(MigrationError):
    """AEAD open failed: tampered box, wrong key or wrong associated data."""


class EmptyPassword(MigrationError):
    pass


class UnknownUser(MigrationError):
    pass


class UnknownCloud(MigrationError):
    pass


class SameCloud(MigrationError):
    pass


class UnknownSession(MigrationError):
    pass


class UnknownFile(MigrationError):
    pass


class DuplicateFile(MigrationError):
    pass


class MissingBlock(MigrationError):
    pass


class InvalidProof(MigrationError):
    """Deletion refused because the acknowledgment evidence does not verify."""


class MalformedMessage(MigrationError):
    pass


class UnknownLink(MigrationError):
    pass


class HookAlreadyInstalled(MigrationError):
    pass


class CalibrationMissing(MigrationError):
    pass


class DegenerateFit(MigrationError):
    pass


class NonPositiveInput(MigrationError):
    pass


class EmptyInput(MigrationError):
    pass


class ConfigError(MigrationError):
    pass
