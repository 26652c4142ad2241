from typing import Sequence


class ClusteringDomainError(ValueError):
    """Raised when inputs violate a fit's preconditions (too few points, k too large, bad dims)."""
    pass


class ClusterCoverageError(KeyError):
    """Raised when an assignment and the registry cover different languages."""

    def __init__(self, missing: Sequence[str] = (), unknown: Sequence[str] = ()):
        self.missing = sorted(missing)
        self.unknown = sorted(unknown)
        super().__init__(self.missing or self.unknown)

    def __str__(self) -> str:
        parts = []
        if self.missing:
            parts.append(f"languages without a cluster: {self.missing}")
        if self.unknown:
            parts.append(f"clustered languages not in registry: {self.unknown}")
        return "; ".join(parts)
