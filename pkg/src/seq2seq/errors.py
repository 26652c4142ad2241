from typing import List


class ConfigError(ValueError):
    """Raised when a model or adapter configuration is invalid; lists every violation."""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration: " + "; ".join(self.violations))


class CoverageError(KeyError):
    """Raised when an adapter set does not cover a slot the model requires."""

    def __init__(self, slot: str, set_id: str = ""):
        self.slot = slot
        self.set_id = set_id
        where = f" in adapter set '{set_id}'" if set_id else ""
        super().__init__(f"missing adapter slot '{slot}'{where}")

    def __str__(self) -> str:
        return self.args[0]


class SequenceLengthError(ValueError):
    """Raised when a sequence (including its language tag) exceeds max_len."""

    def __init__(self, length: int, max_len: int):
        self.length = length
        self.max_len = max_len
        super().__init__(f"sequence length {length} exceeds max_len {max_len}")
