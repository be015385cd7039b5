# src/qpbench/errors.py
"""Exception types raised by qpbench. The CLI maps them onto exit codes."""


class QPBenchError(Exception):
    """Root of every qpbench error."""


class ConfigError(QPBenchError, ValueError):
    """Invalid run configuration or command-line usage."""


class TopologyError(QPBenchError, ValueError):
    """Malformed topology document or invalid sub-chip request."""


class ProtocolError(QPBenchError, ValueError):
    """Unknown protocol, variant, or a path too short for a template."""


class SimulationError(QPBenchError):
    """Circuit cannot be simulated (register too large, invalid gate placement)."""


class BackendError(QPBenchError):
    """Backend unavailable, job submission rejected, or job store unreadable."""


class AssessmentError(QPBenchError, ValueError):
    """Shot results that cannot be turned into a fidelity estimate."""


class WorkflowError(QPBenchError):
    """A record or merge that does not fit the current assessment state."""


class JournalError(QPBenchError):
    """Journal is corrupt, truncated, of an unsupported version, or mismatched."""


class ReportError(QPBenchError, ValueError):
    """Report requested on incompatible inputs."""
