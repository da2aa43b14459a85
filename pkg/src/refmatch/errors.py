"""Exception types shared across the toolkit."""


class RefmatchError(Exception):
    """Base class for all toolkit errors."""


class GeometryError(RefmatchError):
    """Mask / image dimensions do not agree."""


class SchemaError(RefmatchError):
    """A record or file violates one of the declared schemas.

    ``locus`` points at the offending record (e.g. ``"dataset.jsonl:7"``)
    when known; it is folded into the message so plain ``str(err)`` is
    always self-contained.
    """

    def __init__(self, message: str, locus: str | None = None):
        self.locus = locus
        if locus:
            message = f"{locus}: {message}"
        super().__init__(message)
