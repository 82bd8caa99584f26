"""Exception taxonomy shared across the pipeline stages."""


class HydroError(Exception):
    """Base class for all pipeline errors."""


class MalformedFilename(HydroError):
    """Image filename does not follow the Site_Name__Timestamp grammar."""


class EndpointUnavailable(HydroError):
    """Remote endpoint kept failing after bounded retries."""


class MalformedResponse(HydroError):
    """Endpoint answered, but the payload cannot be parsed."""

    def __init__(self, message, page_offset=None):
        super().__init__(message)
        self.page_offset = page_offset


class SchemaMismatch(HydroError):
    """A CSV file does not carry the expected columns."""

    def __init__(self, message, missing=(), extra=()):
        super().__init__(message)
        self.missing = tuple(missing)
        self.extra = tuple(extra)


class UnknownZone(HydroError):
    """No timezone could be resolved for a site."""


class UnclassifiedRecord(HydroError):
    """A record reached the daytime filter without a day/night label."""


class DegenerateInput(HydroError):
    """Input collapses to a single point; no mixture can be fitted."""


class DimensionMismatch(HydroError):
    """Two pixel grids or masks do not share the same shape."""


class EmptyInput(HydroError):
    """An aggregate was requested over zero elements."""


class UnsortedInput(HydroError):
    """Merge input violates the per-site ascending-timestamp precondition."""


class MixedOffsets(HydroError):
    """Naive and offset-aware timestamps were mixed in one merge input."""


class ZeroVariance(HydroError):
    """Actual values are constant; variance-based metric is undefined."""


class DuplicateTrialId(HydroError):
    """A trial id was observed twice by the optimizer."""


class StepOutOfRange(HydroError):
    """Scheduler step outside [0, total_steps]."""


class ProtocolViolation(HydroError):
    """Trainer sent a message outside the wire protocol grammar."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class AllTrialsFailed(HydroError):
    """Every trial in a study failed; no incumbent exists."""


class ConfigError(HydroError):
    """Pipeline configuration is missing or inconsistent."""
