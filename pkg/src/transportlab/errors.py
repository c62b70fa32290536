"""Exception hierarchy shared by all modules."""


class TransportLabError(Exception):
    """Base class for library errors."""


class ModelError(TransportLabError, ValueError):
    pass


class HermiticityViolation(ModelError):
    pass


class RangeViolation(ModelError):
    pass


class DegenerateLattice(ModelError):
    pass


class SpinPairingError(ModelError):
    pass


class GapClosed(TransportLabError):
    """The Fermi energy is not inside a spectral gap (or the gap is too small)."""


class EigenvalueAtFermi(GapClosed):
    pass


class AliasingRisk(TransportLabError, ValueError):
    """Grid too coarse for the requested real-space truncation radius."""


class GridMismatch(TransportLabError, ValueError):
    pass


class SampleTooSmall(TransportLabError, ValueError):
    pass


class ConfigError(TransportLabError, ValueError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class UnknownKey(ParseError):
    pass


class BadValue(ParseError):
    pass


class IoError(TransportLabError, OSError):
    """A report could not be written."""
