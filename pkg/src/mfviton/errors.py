class MFVitonError(Exception):
    exit_code = 1


class ConfigError(MFVitonError):
    """Invalid configuration or mismatched artifact lineage."""

    exit_code = 3


class DivergenceError(MFVitonError):
    """A loss or sampler state became non-finite."""

    exit_code = 4


class ArtifactIOError(MFVitonError):
    exit_code = 5
