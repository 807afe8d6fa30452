"""Exception hierarchy shared across the package."""


class UrbanHeightError(Exception):
    """Base class for all package errors."""


class GridMismatchError(UrbanHeightError, ValueError):
    """Two rasters or grids that must share a GridSpec do not."""


class ProjectionDomainError(UrbanHeightError, ValueError):
    """A projected coordinate lies outside the projection ellipse."""


class ConvergenceError(UrbanHeightError, RuntimeError):
    """An iterative solver exhausted its iteration budget."""


class GridParseError(UrbanHeightError, ValueError):
    """Malformed ASCII grid file. ``line`` is 1-based."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + message)


class HeaderError(GridParseError):
    pass


class ValueCountError(GridParseError):
    pass


class NumberParseError(GridParseError):
    pass


class MalformedRecordError(UrbanHeightError, ValueError):
    """A footprint record lacks a metric it needs."""


class ConfigError(UrbanHeightError, ValueError):
    """Invalid pipeline configuration or parameter set."""


class TrainingError(UrbanHeightError, ValueError):
    pass


class PredictionError(UrbanHeightError, ValueError):
    pass


class MissingModelError(UrbanHeightError, KeyError):
    """No fitted model for one or more zones that need predictions."""

    def __init__(self, zone_ids):
        self.zone_ids = sorted(zone_ids)
        super().__init__(f"no model for zone(s): {', '.join(map(str, self.zone_ids))}")

    def __str__(self):
        return self.args[0]


class StageError(UrbanHeightError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
