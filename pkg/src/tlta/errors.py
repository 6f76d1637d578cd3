"""Exception hierarchy shared by all tlta modules."""


class TltaError(Exception):
    """Base class for every error raised by the package."""


# geometry
class InvalidPolygon(TltaError):
    pass


class OutOfGrid(TltaError):
    pass


class OpOutOfGrid(TltaError):
    pass


class NoPerimeter(TltaError):
    pass


# trust
class InvalidManifest(TltaError):
    pass


class AlreadyIssued(TltaError):
    pass


# protocol
class DuplicateTransaction(TltaError):
    pass


class RegistrationDenied(TltaError):
    pass


class NotRegistered(TltaError):
    pass


# device
class UnknownFunction(TltaError):
    pass


class InvalidTransition(TltaError):
    pass


# sim / cli
class ConfigError(TltaError):
    pass


class InvariantBreach(TltaError):
    pass
