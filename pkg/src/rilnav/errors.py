"""Exception hierarchy. Everything raised on purpose derives from RilnavError
so the CLI can catch one type and print a single-line error."""


class RilnavError(Exception):
    """Base class for all package errors."""


class MapError(RilnavError):
    """Malformed map file or invalid grid."""


class SimError(RilnavError):
    """Invalid simulator input (pose inside obstacle, bad clearance, ...)."""


class PolicyError(RilnavError):
    """Invalid network input/output or non-finite activations."""


class CheckpointError(RilnavError):
    """Unreadable or mismatched checkpoint file."""


class RewardError(RilnavError):
    """Invalid reward specification (blocked goal, unknown variant, ...)."""


class PlanError(RilnavError):
    """No feasible path between the requested cells."""


class DemoError(RilnavError):
    """Demonstration generation or file parsing failure."""


class TrainError(RilnavError):
    """Training diverged or was misconfigured."""


class ConfigError(RilnavError):
    """Malformed experiment configuration."""
