"""Exception hierarchy shared by all syncnet modules."""


class SyncNetError(Exception):
    """Base class for every error raised by syncnet."""


class DimensionMismatch(SyncNetError, ValueError):
    pass


class NotHurwitz(SyncNetError, ValueError):
    pass


class SingularSystem(SyncNetError, ValueError):
    pass


class NotPositiveDefinite(SyncNetError, ValueError):
    pass


class GraphError(SyncNetError, ValueError):
    pass


class SelfLoop(GraphError):
    pass


class CycleDetected(GraphError):
    pass


class NonBinaryEntry(GraphError):
    pass


class Unreachable(GraphError):
    def __init__(self, agent):
        super().__init__(f"agent {agent} is not reachable from the leader")
        self.agent = agent


class NonPositiveParameter(SyncNetError, ValueError):
    pass


class MatchingInfeasible(SyncNetError, ValueError):
    def __init__(self, residual, where=""):
        msg = f"matching condition infeasible (relative residual {residual:.3e})"
        if where:
            msg += f" for {where}"
        super().__init__(msg)
        self.residual = residual
        self.where = where


class NotCompanionForm(SyncNetError, ValueError):
    pass


class DecompositionInvalid(SyncNetError, ValueError):
    def __init__(self, residual):
        super().__init__(f"canonical decomposition residual {residual:.3e} exceeds tolerance")
        self.residual = residual


class EmptyNeighborList(SyncNetError, ValueError):
    pass


class SaturationModeDisabled(SyncNetError, ValueError):
    pass


class EmptyLog(SyncNetError, ValueError):
    pass


class ParseError(SyncNetError, ValueError):
    pass


class ValidationError(SyncNetError, ValueError):
    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason
