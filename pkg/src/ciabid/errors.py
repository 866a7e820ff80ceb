"""Exception hierarchy.

Every error carries the name of the module that raised it so the CLI can
print a single machine-parsable line. ``exit_code`` groups errors into the
three failure classes the command line reports.
"""


class CiaError(Exception):
    exit_code = 1
    module = "ciabid"

    def __init__(self, message: str = "", *, module: str | None = None):
        super().__init__(message)
        if module is not None:
            self.module = module

    @property
    def code(self) -> str:
        return type(self).__name__


class ConfigError(CiaError):
    exit_code = 2


class DataError(CiaError):
    exit_code = 3


class InfeasibleError(CiaError):
    exit_code = 4


class InvalidConfig(ConfigError):
    module = "log_synth"

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class EmptyLog(DataError):
    module = "core_model"


class InvalidRecord(DataError):
    module = "core_model"


class UnknownAd(DataError):
    module = "replay_engine"

    def __init__(self, ad_id, *, module: str | None = None):
        super().__init__(f"ad {ad_id!r} does not appear in the log", module=module)
        self.ad_id = ad_id


class SingleDayLog(DataError):
    module = "log_synth"


class NonMonotone(DataError):
    module = "replay_engine"


class DegenerateAd(DataError):
    module = "inference"

    def __init__(self, ad_id, reason: str):
        super().__init__(f"ad {ad_id!r}: {reason}")
        self.ad_id = ad_id
        self.reason = reason


class EmptyGrid(DataError):
    module = "optimizers"


class InfeasibleWindow(InfeasibleError):
    module = "optimizers"
