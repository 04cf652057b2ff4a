"""Exception hierarchy shared by every module."""


class LooAuditError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(LooAuditError, ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class DimensionError(LooAuditError, ValueError):
    pass


class UnsupportedLossError(LooAuditError, ValueError):
    pass


class UnsupportedModelError(LooAuditError, TypeError):
    pass


class NumericError(LooAuditError, FloatingPointError):
    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message if layer is None else f"layer {layer}: {message}")
        self.layer = layer


class TrainingError(LooAuditError, RuntimeError):
    def __init__(self, message: str, epoch: int, step: int):
        super().__init__(f"{message} (epoch {epoch}, step {step})")
        self.epoch = epoch
        self.step = step


class IngestionError(LooAuditError, ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column


class AuditError(LooAuditError, RuntimeError):
    def __init__(self, message: str, removed_id: int | None = None):
        super().__init__(message if removed_id is None else f"{message} (removed id {removed_id})")
        self.removed_id = removed_id


class OracleSizeError(LooAuditError, ValueError):
    pass
