"""Exception hierarchy. ``category`` is what the CLI reports on failure."""


class OpenGroundError(Exception):
    category = "error"


class SceneError(OpenGroundError, ValueError):
    category = "scene"


class OltError(OpenGroundError, ValueError):
    category = "olt"


class SchemaError(OpenGroundError, ValueError):
    """A model reply or fixture did not match the expected structure."""

    category = "schema"

    def __init__(self, message, fragment=None):
        if fragment is not None:
            message = f"{message} (offending fragment: {fragment!r})"
        super().__init__(message)
        self.fragment = fragment


class TemplateError(OpenGroundError, KeyError):
    category = "template"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class BackendError(OpenGroundError):
    category = "backend"


class TransportError(BackendError):
    category = "transport"


class RateLimitError(TransportError):
    category = "rate_limit"


class AuthError(BackendError):
    category = "auth"


class EmbeddingError(BackendError):
    def __init__(self, text, cause):
        super().__init__(f"embedding failed for text {text!r}: {cause}")
        self.text = text


class GroundingError(OpenGroundError):
    category = "grounding"
