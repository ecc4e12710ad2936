"""Exception hierarchy shared by every subsystem."""


class ThermoEdgeError(Exception):
    """Base class for all package errors."""


class InvalidRangeError(ThermoEdgeError, ValueError):
    """Quantization bounds are non-finite or inverted."""


class EmptyDatasetError(ThermoEdgeError, ValueError):
    pass


# container (TLDM) errors
class ContainerError(ThermoEdgeError):
    pass


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


class ModelFormatError(ContainerError):
    """Container is well formed but its contents are inconsistent."""


# dataset directory errors
class DatasetError(ThermoEdgeError):
    pass


class NoClassDirsError(DatasetError):
    pass


class NotPGMError(DatasetError):
    pass


class MaxvalError(DatasetError):
    pass


class InsufficientSamplesError(DatasetError, ValueError):
    pass


# wire protocol errors
class ProtocolError(ThermoEdgeError):
    pass


class WireMagicError(ProtocolError):
    pass


class UnknownTypeError(ProtocolError):
    pass


class WireTruncatedError(ProtocolError):
    pass


class ZeroDimensionError(ProtocolError):
    pass


class ConnectionRefusedByServer(ThermoEdgeError, ConnectionError):
    pass


class ConnectionResetByServer(ThermoEdgeError, ConnectionError):
    pass
