"""Exception types shared across the package."""


class FairpanelError(Exception):
    """Base class for all package-specific errors."""


# --- dataset ingestion ---

class MissingColumn(FairpanelError):
    def __init__(self, column: str):
        super().__init__(f"required column {column!r} is missing from the CSV header")
        self.column = column


class UnknownValue(FairpanelError):
    """A CSV cell holds a value outside the schema's admissible set."""

    def __init__(self, row: int, feature: str, value: str):
        super().__init__(f"row {row}: value {value!r} is not admissible for feature {feature!r}")
        self.row = row
        self.feature = feature
        self.value = value


class NonpositiveWeight(FairpanelError):
    def __init__(self, row: int, weight: float):
        super().__init__(f"row {row}: weight {weight} must be positive")
        self.row = row
        self.weight = weight


class EmptyDataset(FairpanelError):
    pass


class MissingHouseholdColumn(FairpanelError):
    pass


class SchemaMismatch(FairpanelError):
    pass


# --- marginal assignment ---

class EmptyPool(FairpanelError):
    pass


class InfeasibleCap(FairpanelError):
    """Capping marginals at 1 cannot preserve their sum (fewer than k usable agents)."""


class BadPool(FairpanelError):
    """The pool fails the good-pool conditions required by the active policy."""

    def __init__(self, verdict):
        super().__init__(f"pool is not good under the active policy: {verdict.summary()}")
        self.verdict = verdict


# --- numerics / rounding ---

class NumericalFailure(FairpanelError):
    pass


class Stalled(FairpanelError):
    """Column generation produced a panel that is already in the support."""


class IterationLimit(FairpanelError):
    pass


class QuotaViolation(FairpanelError):
    """A generated panel violates the quota set it was required to satisfy."""


# --- greedy baseline ---

class QuotaInfeasible(FairpanelError):
    """A lower quota exceeds the number of pool members carrying that pair."""

    def __init__(self, pair, lower: int, available: int):
        super().__init__(
            f"lower quota {lower} for {pair} exceeds the {available} pool members with that value"
        )
        self.pair = pair
        self.lower = lower
        self.available = available


class RestartLimit(FairpanelError):
    pass


# --- learning ---

class Diverged(FairpanelError):
    """The likelihood became NaN/inf during optimization (bad inputs, e.g. qbar=0)."""
