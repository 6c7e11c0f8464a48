"""Exception types raised across the simulator."""


class SimError(Exception):
    """Base class for all simulator errors."""


class ZeroReserve(SimError):
    pass


class UnknownPool(SimError):
    pass


class InsufficientBalance(SimError):
    pass


class GasLimitExceeded(SimError):
    pass


class DuplicateTx(SimError):
    pass


class NoProfitableSize(SimError):
    pass


class NoProfit(SimError):
    pass


class BudgetExceeded(SimError):
    pass


class UnknownNode(SimError):
    pass


class BuilderRejectsPrivateFlow(SimError):
    pass


class NothingToPropose(SimError):
    pass


class DuplicateReport(SimError):
    pass


class UnknownInclusion(SimError):
    pass


class BadShares(SimError):
    pass


class UnclassifiableEvent(SimError):
    pass


class ConfigError(SimError):
    """Invalid scenario configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message
