"""Exception hierarchy; each family maps to one CLI exit code."""


class BambooError(Exception):
    exit_code = 1


class ConfigError(BambooError):
    exit_code = 1


class StateError(BambooError):
    exit_code = 2


class UnknownKeyword(StateError):
    def __init__(self, keyword: str):
        super().__init__(f"unknown keyword: {keyword!r}")
        self.keyword = keyword


class TransportError(BambooError):
    exit_code = 3


class ProtocolError(BambooError):
    exit_code = 4


class EpochMismatch(ProtocolError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"epoch mismatch: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class DuplicateLabel(ProtocolError):
    pass


class SnapshotError(BambooError):
    """Corrupt or truncated database snapshot."""

    exit_code = 2
