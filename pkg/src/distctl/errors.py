"""Exception types shared across the package."""


class DistctlError(Exception):
    """Base class for all library errors."""


class ConfigError(DistctlError):
    """Invalid configuration; message carries the offending field path."""


class UniverseTooLarge(DistctlError):
    """Sequence universe exceeds the exhaustive-enumeration guard."""


class EmptyCorpus(DistctlError):
    """Corpus contains no usable sequences (or tokens)."""


class SchemaMismatch(DistctlError):
    """Persisted document does not match the expected schema/version."""


class NotTrainable(DistctlError):
    """Gradient or update requested on a frozen model."""


class NoPointwiseConstraints(DistctlError):
    """Pointwise predicate requested on a set with no pointwise constraints."""


class MixedConstraints(DistctlError):
    """Pointwise-product construction requires an all-pointwise set."""


class DegenerateWeights(DistctlError):
    """Importance weights collapsed to an unusable (zero/non-finite) sum."""


class UnattainableTarget(DistctlError):
    """Constraint target lies outside the sampled feature hull."""

    def __init__(self, constraint_id: str, target: float, low: float, high: float):
        self.constraint_id = constraint_id
        self.target = target
        self.low = low
        self.high = high
        super().__init__(
            f"target {target} for constraint '{constraint_id}' is outside the "
            f"sampled feature hull [{low}, {high}]"
        )


class EmptySupport(DistctlError):
    """Unnormalized scores sum to zero; no distribution exists."""


class SupportViolation(DistctlError):
    """A required support-covering condition fails on the given samples."""


class NonpositiveZ(DistctlError):
    """Partition-function estimate is not positive where one is required."""


class TooFewSamples(DistctlError):
    """Metric needs more samples than were provided."""


class NoAcceptedSamples(DistctlError):
    """Rejection sampling exhausted its budget without a single acceptance."""
