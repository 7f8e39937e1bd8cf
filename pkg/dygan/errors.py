# -*- coding: utf-8 -*-


class DyganError(Exception):
    pass


class DimensionError(DyganError, ValueError):
    pass


class ConfigurationError(DyganError, ValueError):
    def __init__(self, message, location=None):
        if location:
            message = "{} ({})".format(message, location)
        super().__init__(message)
        self.location = location


class ContractViolationError(DyganError):
    pass


class TensorFormatError(DyganError):
    pass


class CheckpointError(DyganError):
    def __init__(self, message, entries=()):
        self.entries = list(entries)
        if self.entries:
            message = "{}: {}".format(message, "; ".join(self.entries))
        super().__init__(message)


class OracleError(DyganError):
    pass


class TrainingDivergedError(DyganError):
    def __init__(self, step, losses):
        self.step = step
        self.losses = dict(losses)
        super().__init__("Training diverged at step {}: {}".format(
            step, ", ".join("{}={}".format(k, v) for k, v in sorted(self.losses.items()))
        ))


class ReportTemplateError(DyganError):
    pass
