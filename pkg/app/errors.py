from typing import Any, Dict, List, Optional, Tuple


class LabError(Exception):
    """Base class for every error raised by the lab."""


class InvalidArgumentError(LabError, ValueError):
    """A precondition on an argument does not hold."""


class MeshValidationError(LabError, ValueError):
    """A mesh violates one or more of its invariants."""

    def __init__(self, issues: List[str]):
        self.issues = list(issues)
        super().__init__("Mesh validation failed: " + "; ".join(self.issues))


class AssemblyError(LabError):
    """Operator assembly failed (degenerate cell, size mismatch)."""


class SolverError(LabError):
    """A sparse or dense solve failed."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class DomainError(LabError, ValueError):
    """A field vanishes where the identity requires it not to."""

    def __init__(self, message: str, vertex: Optional[int] = None):
        self.vertex = vertex
        super().__init__(message)


class ResolutionError(LabError):
    """A phase jump along an edge is too large to resolve the branch."""

    def __init__(self, message: str, edge: Optional[Tuple[int, int]] = None, jump: Optional[float] = None):
        self.edge = edge
        self.jump = jump
        super().__init__(message)


class ConfigError(LabError):
    """An experiment configuration could not be read or validated."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        location = ""
        if field:
            location += f" [{field}]"
        if line is not None:
            location += f" (line {line})"
        super().__init__(f"{message}{location}")
