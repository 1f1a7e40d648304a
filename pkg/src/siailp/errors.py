class DataError(Exception):
    """Bad or inconsistent input data (files, vocabularies, caches)."""


class ParseError(DataError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class VocabularyError(DataError):
    pass


class InductiveContractError(DataError):
    """Training and inference graphs violate the inductive split contract."""


class NumericError(ArithmeticError):
    """Non-finite values or a degenerate norm reached the numeric kernel."""
