"""Exception types shared across the package."""


class LyasearchError(Exception):
    """Base class for all package errors."""


class ExprError(LyasearchError):
    pass


class IncompleteSequence(ExprError):
    """Prefix sequence ended while operators still expect children."""


class DanglingTokens(ExprError):
    """Prefix sequence completed an expression before its final token."""


class UnknownToken(ExprError):
    pass


class DimensionMismatch(LyasearchError):
    pass


class NonFiniteAtOrigin(LyasearchError):
    """Expression does not evaluate to a finite value at the origin."""


class ParseError(LyasearchError):
    """Malformed infix expression or system definition file."""


class UnknownBenchmark(LyasearchError):
    pass


class VocabularyMismatch(LyasearchError):
    """Token outside the vocabulary the model was built with."""


class AllMasked(LyasearchError):
    """No legal token remains under the current generation mask."""


class IllegalSequence(LyasearchError):
    """Token sequence violates the generation grammar or its masks."""


class NonFiniteGradient(LyasearchError):
    pass
