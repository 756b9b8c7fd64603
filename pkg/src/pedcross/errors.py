"""Exception taxonomy shared by every pedcross module.

Each class maps to one failure kind named in the public contracts; the CLI
translates them into single-line machine-parsable error records.
"""


class PedcrossError(Exception):
    """Base class for all library errors."""

    kind = "error"


class ConfigError(PedcrossError):
    """Invalid configuration value or combination."""

    kind = "config"


class DimensionError(PedcrossError):
    """Tensor/array shape mismatch."""

    kind = "dimension"


class DataError(PedcrossError):
    """Malformed input data (degenerate boxes, missing frames, ...)."""

    kind = "data"


class RangeError(PedcrossError):
    """Window or index outside the valid range."""

    kind = "range"


class NumericDomainError(PedcrossError):
    """Value outside an operation's numeric domain (e.g. log1p(x <= -1))."""

    kind = "numeric-domain"


class ContractError(PedcrossError):
    """API contract violation (e.g. backward on a non-scalar loss)."""

    kind = "contract"


class GraphError(PedcrossError):
    """Autodiff graph misuse (e.g. backward twice through the same graph)."""

    kind = "graph"


class CompatibilityError(PedcrossError):
    """Checkpoint or artifact version/provenance mismatch."""

    kind = "compatibility"


class IOError_(PedcrossError):
    """Filesystem failure while writing or reading artifacts."""

    kind = "io"
