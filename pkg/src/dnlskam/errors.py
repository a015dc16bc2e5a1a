"""Exception hierarchy shared by all stages."""


class DnlsKamError(Exception):
    """Base class for every error raised by the package."""


class StructuralError(DnlsKamError):
    """Operands live on incompatible lattices or use an unsupported structure."""


class DomainError(DnlsKamError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractError(DnlsKamError):
    """A documented precondition on a series does not hold."""


class ConfigurationError(DnlsKamError, ValueError):
    """Invalid numerical configuration (sample sizes, grids, caps)."""


class InvariantViolation(DnlsKamError):
    """An internal invariant that the theory guarantees was found broken."""


class ResonanceError(DnlsKamError):
    """A small divisor fell below its Diophantine floor.

    Attributes
    ----------
    k : tuple
        Fourier index of the offending term.
    l : tuple
        Normal-mode index pattern of the offending term.
    divisor : complex
        The divisor value that was rejected.
    floor : float
        The lower bound it was required to meet.
    """

    def __init__(self, k, l, divisor, floor):
        self.k = k
        self.l = l
        self.divisor = divisor
        self.floor = floor
        super().__init__(f"resonant divisor at k={k}, l={l}: |{divisor:.3e}| < {floor:.3e}")


class AdmissionError(DnlsKamError):
    """The KAM smallness hypothesis is violated."""


class BlowUpError(DnlsKamError):
    """Numerical integration produced non-finite values."""

    def __init__(self, message, last_time):
        self.last_time = last_time
        super().__init__(f"{message} (last valid time {last_time:.6g})")
