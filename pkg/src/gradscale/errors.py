"""Exception types raised across the package."""


class GradscaleError(Exception):
    """Base class; carries a short machine-readable ``code``."""

    code = "error"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class ShapeError(GradscaleError, ValueError):
    code = "shape_mismatch"


class EmptyBatchError(GradscaleError, ValueError):
    code = "empty_batch"


class ScheduleError(GradscaleError, ValueError):
    code = "schedule_out_of_range"


class CountError(GradscaleError, ValueError):
    code = "zero_class_count"


class LayoutMismatchError(GradscaleError, ValueError):
    code = "layout_mismatch"


class ConfigError(GradscaleError, ValueError):
    """Bad config file or flag combination. ``line`` is 1-based when known."""

    code = "config_error"

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        loc = ""
        if path is not None:
            loc = f"{path}:"
        if line is not None:
            loc += f"{line}:"
        super().__init__(f"{loc} {message}".strip() if loc else message)

    def to_dict(self) -> dict:
        d = super().to_dict()
        if self.line is not None:
            d["line"] = self.line
        if self.path is not None:
            d["path"] = self.path
        return d


class MismatchError(GradscaleError, ValueError):
    """Two trajectories that must share a configuration do not."""

    code = "config_mismatch"
