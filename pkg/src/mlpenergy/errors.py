"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MLPEnergyError(Exception):
    exit_code = 1


class ParseError(MLPEnergyError):
    """Malformed input file. ``location`` is ``path:line`` when known."""

    exit_code = 2

    def __init__(self, message, location=None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class ConfigMismatch(MLPEnergyError):
    exit_code = 3


class NumericalFailure(MLPEnergyError):
    exit_code = 4


class InvalidArchitecture(MLPEnergyError, ValueError):
    exit_code = 3


class InfeasibleTarget(MLPEnergyError, ValueError):
    exit_code = 3


class InsufficientSamples(MLPEnergyError, ValueError):
    exit_code = 3


class NoReferenceRuns(MLPEnergyError, ValueError):
    exit_code = 3


class MissingData(MLPEnergyError, ValueError):
    """The integration window does not overlap any power sample."""

    exit_code = 2


class InvalidMeasurement(NumericalFailure, ValueError):
    def __init__(self, message, run_id=None):
        self.run_id = run_id
        super().__init__(message)


class DegenerateRow(NumericalFailure, ValueError):
    def __init__(self, message, row=None):
        self.row = row
        super().__init__(message)


class DegenerateDesign(NumericalFailure):
    def __init__(self, message, names=()):
        self.names = tuple(names)
        super().__init__(message)


class InvalidEpochModel(MLPEnergyError, ValueError):
    exit_code = 3
