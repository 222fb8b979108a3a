"""Exception types shared across the protocol stack."""


class ProtocolError(Exception):
    """Base class for protocol-level failures."""


class SetupError(ProtocolError):
    """Operands from different sessions/dealers, or a misconfigured session."""


class SoundnessError(ProtocolError):
    """A MAC or constraint check failed: the prover deviated from the protocol."""

    def __init__(self, message: str, record_index: int | None = None):
        super().__init__(message)
        self.record_index = record_index


class InfeasibleError(ProtocolError):
    """A requested operation has no valid output (e.g. nu larger than a group)."""


class ConfigError(ProtocolError):
    """Invalid run configuration or out-of-headroom public parameters."""
