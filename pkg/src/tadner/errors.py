"""Exception hierarchy. Every error raised by the library derives from TadnerError."""


class TadnerError(Exception):
    pass


class MalformedLine(TadnerError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class InvalidTag(TadnerError):
    def __init__(self, line_no: int, tag: str, message: str):
        super().__init__(f"line {line_no}: invalid tag {tag!r}: {message}")
        self.line_no = line_no
        self.tag = tag


class EmptyCorpus(TadnerError):
    pass


class OverlappingSpans(TadnerError):
    pass


class SpanOutOfRange(TadnerError):
    pass


class UnrepresentableSpans(TadnerError):
    """Span set cannot be encoded in the requested scheme (IO with adjacent same-type spans)."""


class UnknownLabel(TadnerError):
    def __init__(self, label: str):
        super().__init__(f"no type name registered for label {label!r}")
        self.label = label


class InsufficientData(TadnerError):
    pass


class SchemaViolation(TadnerError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class FormatError(TadnerError):
    pass


class MissingKey(TadnerError):
    def __init__(self, key: str):
        super().__init__(f"no stored vectors for key {key!r}")
        self.key = key


class LengthMismatch(TadnerError):
    pass


class NonFiniteLoss(TadnerError):
    pass


class DegenerateDenominator(TadnerError):
    pass


class EmptySupport(TadnerError):
    pass


class MissingTypeInSupport(TadnerError):
    def __init__(self, label: str):
        super().__init__(f"type {label!r} has no support entities")
        self.label = label


class FrozenEncoder(TadnerError):
    pass


class ConfigError(TadnerError):
    pass
