"""Exception hierarchy shared by every partopt module."""


class PartoptError(Exception):
    """Base class for all errors raised by partopt."""


class ModelError(PartoptError):
    """Structural problem detected while constructing a model."""


class UnboundParameter(PartoptError):
    def __init__(self, name):
        super().__init__(f"parameter {name!r} is not assigned")
        self.name = name


class UnknownState(PartoptError):
    def __init__(self, state):
        super().__init__(f"unknown state {state!r}")
        self.state = state


class InitialStateEliminated(PartoptError):
    pass


class InvalidDistribution(PartoptError):
    pass


class EmptyPartition(PartoptError):
    pass


class EmptyCandidateSet(PartoptError):
    pass


class AllCandidatesFailed(PartoptError):
    def __init__(self, diagnostics):
        super().__init__(f"all {len(diagnostics)} candidates failed")
        self.diagnostics = diagnostics


class ConfigInvalid(PartoptError):
    pass
