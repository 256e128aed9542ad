"""Exception hierarchy. Each class maps to a CLI exit code."""


class IRSError(Exception):
    exit_code = 1


class ConfigError(IRSError):
    exit_code = 1


class DataError(IRSError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, line_no: int, text: str, reason: str):
        self.line_no = line_no
        self.text = text
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}: {text!r}")


class NumericalError(IRSError):
    exit_code = 3
