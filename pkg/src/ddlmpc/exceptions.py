"""Exception hierarchy shared by every module of the package."""


class DdlmpcError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ArgumentError(DdlmpcError, ValueError):
    """Invalid argument: bad node index, dimension mismatch, bad horizon."""

    exit_code = 2


class DataError(DdlmpcError):
    """Recorded data cannot support the requested parametrization.

    Raised for persistency-of-excitation failures, too-short trajectories and
    local constraint systems that turn out to be infeasible on the data.
    """

    exit_code = 3

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DataCollectionError(DataError):
    """Excitation experiment could not produce persistently exciting data."""


class InfeasibleError(DdlmpcError):
    """An optimization problem has an empty feasible set."""

    exit_code = 4

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class NonConvergenceError(DdlmpcError):
    """An iterative solver hit its iteration cap before meeting tolerance."""

    exit_code = 4

    def __init__(self, message, history=None, agent=None, iteration=None):
        super().__init__(message)
        self.history = history if history is not None else {}
        self.agent = agent
        self.iteration = iteration
