"""
Simulator error types.

All of them derive from ValueError so callers (and the REST error
middleware) can treat any domain failure as bad input.
"""
from typing import Optional


class EdgeFlowError(ValueError):
    """Base class for simulator errors."""


class ConfigurationError(EdgeFlowError):
    """Invalid configuration or mismatched dimensions."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        self.message = message
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericError(EdgeFlowError):
    """A non-finite value appeared during computation."""

    def __init__(
        self,
        message: str,
        layer: Optional[int] = None,
        round: Optional[int] = None,
        client: Optional[int] = None,
    ):
        self.layer = layer
        self.round = round
        self.client = client
        context = []
        if round is not None:
            context.append(f"round {round}")
        if client is not None:
            context.append(f"client {client}")
        if layer is not None:
            context.append(f"layer {layer}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


class CapacityError(EdgeFlowError):
    """Not enough samples of a class to honor a partition quota."""

    def __init__(self, message: str, label: Optional[int] = None):
        self.label = label
        super().__init__(message)


class SamplingError(EdgeFlowError):
    """A shard cannot supply the requested mini-batch."""


class ProtocolError(EdgeFlowError):
    """Protocol precondition violated (e.g. aggregating an empty cluster)."""


class TopologyError(EdgeFlowError):
    """Unknown node, unmapped cluster or unreachable destination."""
