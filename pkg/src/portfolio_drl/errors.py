"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI prints it as the
first token of its one-line failure message.
"""


class PortfolioDrlError(Exception):
    category = "error"


class ParseError(PortfolioDrlError, ValueError):
    category = "parse"


class ValidationError(PortfolioDrlError, ValueError):
    category = "validation"


class DatasetError(PortfolioDrlError, ValueError):
    category = "dataset"


class WindowError(PortfolioDrlError, IndexError):
    category = "window"


class SpecError(PortfolioDrlError, ValueError):
    category = "spec"


class ActionError(PortfolioDrlError, ValueError):
    category = "action"


class StateError(PortfolioDrlError, RuntimeError):
    category = "state"


class NumericError(PortfolioDrlError, ArithmeticError):
    category = "numeric"


class MetricsError(PortfolioDrlError, ValueError):
    category = "metrics"


class ShapeError(PortfolioDrlError, ValueError):
    category = "shape"


class GraphError(PortfolioDrlError, RuntimeError):
    category = "graph"


class CheckpointError(PortfolioDrlError, ValueError):
    category = "checkpoint"


class ConfigError(PortfolioDrlError, ValueError):
    category = "config"


class ReportError(PortfolioDrlError, FileNotFoundError):
    category = "report"
