class CfauditError(Exception):
    """Base class for all errors raised by cfaudit."""


class DataError(CfauditError, ValueError):
    """Malformed dataset, schema, or instance."""


class ModelError(CfauditError):
    """Training or scoring failure."""


class BridgeError(ModelError):
    """The external model process misbehaved."""


class ConfigError(CfauditError, ValueError):
    """Invalid audit configuration."""


class MetricError(CfauditError, ValueError):
    """A metric is undefined for the given explanations."""
