"""Exception hierarchy shared by all modules."""


class MrfError(Exception):
    """Base class for every error raised by mrflift."""


class UaiFormatError(MrfError, ValueError):
    """Malformed UAI text. ``line`` is 1-based when known."""

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class UnknownPreamble(UaiFormatError):
    pass


class TruncatedFile(UaiFormatError):
    pass


class TableSizeMismatch(UaiFormatError):
    pass


class IndexOutOfRange(UaiFormatError):
    pass


class NonPositivePotential(MrfError, ValueError):
    pass


class ShapeMismatch(MrfError, ValueError):
    pass


class TooLarge(MrfError):
    pass


class HighOrderUnsupported(MrfError):
    pass


class InvalidRho(MrfError, ValueError):
    pass


class NonPositiveTemperature(MrfError, ValueError):
    pass


class NonScalarLoss(MrfError, ValueError):
    pass


class DegenerateTopology(MrfError):
    pass


class SchemaError(MrfError, ValueError):
    pass


class UnknownState(SchemaError):
    pass
