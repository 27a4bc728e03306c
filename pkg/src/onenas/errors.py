class OneNasError(Exception):
    pass


class ContractError(OneNasError, ValueError):
    """A precondition of an operation was violated by the caller."""


class NumericError(OneNasError, ArithmeticError):
    """A computation produced a non-finite value."""

    def __init__(self, message, node_id=None, step=None):
        super().__init__(message)
        self.node_id = node_id
        self.step = step
