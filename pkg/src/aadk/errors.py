"""Exception types shared across the toolkit.

Every failure surfaced to callers derives from AadkError and carries a
stable ``code`` string, which the CLI prints as ``error: <code>: <message>``.
"""

from __future__ import annotations


class AadkError(Exception):
    """Base class for all toolkit errors."""

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


# --- graph model ------------------------------------------------------------

class UnknownNodeError(AadkError):
    code = "unknown-node"


class UnknownPortError(AadkError):
    code = "unknown-port"


class DuplicateNodeError(AadkError):
    code = "duplicate-node"


class DuplicateEdgeError(AadkError):
    code = "duplicate-edge"


class InvalidGraphError(AadkError):
    """Raised when an operation requires a graph that passes validation."""

    code = "invalid-graph"


# --- text formats -----------------------------------------------------------

class DocumentSyntaxError(AadkError):
    """Malformed document text (bad JSON, truncation), with position."""

    code = "syntax"

    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(message)
        self.line = line
        self.col = col

    def __str__(self) -> str:
        if self.line:
            return f"{self.message} (line {self.line}, col {self.col})"
        return self.message


class SchemaError(AadkError):
    """Structurally valid text that violates the document schema."""

    code = "schema"

    def __init__(self, message: str, line: int = 0):
        super().__init__(message)
        self.line = line

    def __str__(self) -> str:
        if self.line:
            return f"{self.message} (line {self.line})"
        return self.message


# --- scriptlet --------------------------------------------------------------

class ScriptletParseError(AadkError):
    code = "parse"

    def __init__(self, message: str, line: int, col: int, expected: str = ""):
        super().__init__(message)
        self.line = line
        self.col = col
        self.expected = expected

    def __str__(self) -> str:
        return f"{self.message} (line {self.line}, col {self.col})"


class EvalError(AadkError):
    """Runtime evaluation failure inside a scriptlet.

    ``kind`` is one of UnknownIdent, TypeMismatch, IndexOutOfRange,
    DivByZero, NonFinite. ``path`` locates the failing subexpression.
    """

    code = "eval"

    UNKNOWN_IDENT = "UnknownIdent"
    TYPE_MISMATCH = "TypeMismatch"
    INDEX_OUT_OF_RANGE = "IndexOutOfRange"
    DIV_BY_ZERO = "DivByZero"
    NON_FINITE = "NonFinite"

    def __init__(self, kind: str, message: str, path: str = ""):
        super().__init__(message)
        self.kind = kind
        self.path = path

    def __str__(self) -> str:
        if self.path:
            return f"{self.kind}: {self.message} (at {self.path})"
        return f"{self.kind}: {self.message}"


# --- runtime ----------------------------------------------------------------

class IllegalStateError(AadkError):
    code = "illegal-state"


class InvalidChoiceError(AadkError):
    code = "invalid-choice"


class NodeFailure(AadkError):
    """An error raised while executing a node; catchable by error handlers.

    ``kind`` is a short machine name (DivByZero, RouteMissing, ExternalFailed,
    HandlerError, ...); ``node`` is the id of the node that failed.
    """

    code = "node-failure"

    def __init__(self, kind: str, message: str, node: str = ""):
        super().__init__(message)
        self.kind = kind
        self.node = node

    def record(self) -> dict:
        """The JSON-shaped error record delivered on a catch port."""
        return {"message": self.message, "node": self.node, "kind": self.kind}

    def __str__(self) -> str:
        if self.node:
            return f"{self.kind} at {self.node}: {self.message}"
        return f"{self.kind}: {self.message}"


class UnknownSessionError(AadkError):
    code = "unknown-session"


# --- gateway ----------------------------------------------------------------

class ReplayMissError(AadkError):
    code = "replay-miss"

    def __init__(self, fingerprint: str):
        super().__init__(f"no recorded response for fingerprint {fingerprint}")
        self.fingerprint = fingerprint


class ProviderError(AadkError):
    code = "provider"

    def __init__(self, status: int, body: str):
        super().__init__(f"provider returned status {status}: {body[:200]}")
        self.status = status
        self.body = body


# --- plugins ----------------------------------------------------------------

class ManifestError(AadkError):
    code = "manifest"


class NamespaceConflictError(AadkError):
    code = "namespace-conflict"


class DowngradeRefusedError(AadkError):
    code = "downgrade-refused"


class UnknownComponentError(AadkError):
    code = "unknown-component"


class HandlerError(AadkError):
    code = "handler"


# --- packaging / services ---------------------------------------------------

class MissingGraphError(AadkError):
    code = "missing-graph"


class UnresolvedSubAgentError(AadkError):
    code = "unresolved-subagent"


class UnresolvedPluginError(AadkError):
    code = "unresolved-plugin"


class InvalidBundleError(AadkError):
    code = "invalid-bundle"


class BindError(AadkError):
    code = "bind"
