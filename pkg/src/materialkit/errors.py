"""Exception hierarchy shared across the toolkit."""


class MaterialKitError(Exception):
    """Base class for all toolkit errors."""


class PreconditionError(MaterialKitError, ValueError):
    pass


class TemplateError(MaterialKitError, ValueError):
    pass


class BackendError(MaterialKitError, RuntimeError):
    """A pluggable model backend failed.

    ``context`` names what was being processed (a class, a record id, ...).
    """

    def __init__(self, message, context=None):
        super().__init__(message if context is None else f"{message} [{context}]")
        self.context = context


class DimensionError(MaterialKitError, ValueError):
    pass


class NumericError(MaterialKitError, FloatingPointError):
    pass


class ConflictError(MaterialKitError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "conflict"


class InsufficientDataError(MaterialKitError, ValueError):
    def __init__(self, message, class_name=None):
        super().__init__(message)
        self.class_name = class_name


class LabelMappingError(MaterialKitError, ValueError):
    def __init__(self, offenders):
        self.offenders = sorted(set(offenders))
        super().__init__(f"labels not mappable onto taxonomy: {', '.join(self.offenders)}")


class ConfigError(MaterialKitError, ValueError):
    pass


class RunError(MaterialKitError, RuntimeError):
    pass
