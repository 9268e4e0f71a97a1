"""Exception taxonomy: every failure mode maps to one of these."""


class HcfnetError(Exception):
    """Base class for contract violations raised by this package."""


class ShapeError(HcfnetError):
    """Operands have ranks or extents the operation cannot accept."""


class ConfigError(HcfnetError):
    """A configuration value violates a structural requirement."""


class ContractError(HcfnetError):
    """A runtime precondition was violated (non-finite values, bad state)."""


class DomainError(HcfnetError):
    """Input values lie outside the mathematical domain of the operation."""


class FileFormatError(HcfnetError):
    """A binary or text artifact on disk does not match its expected layout."""
