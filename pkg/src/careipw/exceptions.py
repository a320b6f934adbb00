"""Exception and warning classes raised across the package."""


class CareIpwError(Exception):
    """Base class for errors raised by this package."""


class SingularDesign(CareIpwError):
    """The design matrix (or its weighted normal equations) is rank deficient."""


class InvalidResponse(CareIpwError, ValueError):
    """Response values fall outside the support of the GLM family."""


class MissingColumn(CareIpwError, KeyError):
    """A referenced column is absent from the data."""

    def __str__(self):
        return str(self.args[0]) if self.args else "missing column"


class EmptyArm(CareIpwError, ValueError):
    """One exposure arm has no units."""


class ExposureInOutcomeModel(CareIpwError, ValueError):
    """The outcome model formula references the exposure column."""


class DegenerateArm(CareIpwError, ValueError):
    """A discrete law puts zero marginal mass on an exposure arm."""


class PositivityFailure(CareIpwError, ValueError):
    """A discrete law has a propensity of exactly 0 or 1 on its support."""


class InvalidDgp(CareIpwError, ValueError):
    """A discrete law violates its probability-table invariants."""


class IngestError(CareIpwError, ValueError):
    """Base class for record-level validation failures during ingestion."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class NonPositiveFollowUp(IngestError):
    pass


class NonBinaryField(IngestError):
    pass


class InconsistentClusterExposure(IngestError):
    pass


class EmptyCluster(IngestError):
    pass


class ConfigError(CareIpwError, ValueError):
    """A simulation or CLI configuration is invalid."""


class NonConvergence(UserWarning):
    """IRLS hit its iteration limit or diverged; the fit is still returned."""


class PositivityViolation(UserWarning):
    """Fitted propensities were clamped at the probability floor."""
