"""Exception hierarchy shared across the package."""


class LossEvoError(Exception):
    pass


class ShapeError(LossEvoError, ValueError):
    pass


class ArityError(LossEvoError, ValueError):
    pass


class NumericError(LossEvoError, ArithmeticError):
    """A primitive produced a non-finite value.

    ``kind`` names the primitive, ``node`` the graph node (if known).
    """

    def __init__(self, kind: str, summary: str = "", node: int | None = None):
        self.kind = kind
        self.summary = summary
        self.node = node
        where = f" at node {node}" if node is not None else ""
        super().__init__(f"non-finite result from {kind}{where}: {summary}")


class ContractError(LossEvoError, ValueError):
    pass


class GraphCycleError(LossEvoError, ValueError):
    def __init__(self, node: int):
        self.node = node
        super().__init__(f"graph contains a cycle through node {node}")


class GraphValidationError(LossEvoError, ValueError):
    pass


class ParseError(LossEvoError, ValueError):
    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class ConfigError(LossEvoError, ValueError):
    def __init__(self, message: str, field: str = ""):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)
