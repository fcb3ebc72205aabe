"""Exception hierarchy shared by every layer of the simulator."""


class ShapmktError(Exception):
    pass


class ParameterError(ShapmktError, ValueError):
    pass


class RangeError(ShapmktError, ValueError):
    """A value does not fit the fixed-point / ring range."""


class IncompleteSharesError(ShapmktError):
    pass


class ShapeError(ShapmktError, ValueError):
    pass


class DealerError(ShapmktError):
    pass


class AbortError(ShapmktError):
    """A party stopped cooperating; the protocol cannot finish."""


class TransportError(ShapmktError):
    pass


class CircuitParseError(ShapmktError, ValueError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class CircuitValidationError(ShapmktError, ValueError):
    pass


class UnsupportedGateError(CircuitParseError):
    pass


class NonceReuseError(ShapmktError):
    pass


class ModelFormatError(ShapmktError, ValueError):
    pass


class DivergenceError(ShapmktError, ArithmeticError):
    pass


class CapExceededError(ShapmktError, ValueError):
    pass


class UndefinedCorrelationError(ShapmktError, ValueError):
    pass


class LedgerError(ShapmktError):
    pass


class InsufficientFundsError(LedgerError):
    pass


class UnknownTxError(LedgerError, KeyError):
    pass


class SettledTxError(LedgerError):
    pass


class DeadlineError(LedgerError):
    pass


class ConfigError(ShapmktError, ValueError):
    pass


class ProtocolAbort(ShapmktError):
    def __init__(self, phase, cause):
        self.phase = phase
        self.cause = cause
        super().__init__(f"[{phase}] {cause}")


class IntegrityError(ShapmktError, ValueError):
    """Decrypted bytes fail the canonical-encoding checks (usually a wrong key)."""
