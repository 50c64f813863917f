"""Exception and warning types shared across the package."""


class MorphinkError(Exception):
    """Base class for all package errors."""


# --- drawing / parsing ---

class ParseError(MorphinkError):
    """Malformed SVG or bounds input."""


class UnsupportedElement(ParseError):
    def __init__(self, name: str, detail: str = ""):
        self.name = name
        msg = f"unsupported SVG construct: {name}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class MalformedBounds(ParseError):
    def __init__(self, element_id: str, detail: str = ""):
        self.element_id = element_id
        msg = f"malformed bounds entry for element {element_id!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DanglingBoundsRef(ParseError):
    def __init__(self, element_id: str):
        self.element_id = element_id
        super().__init__(f"bounds entry references unknown element id {element_id!r}")


class DimensionMismatch(MorphinkError):
    pass


class OutOfBounds(MorphinkError):
    def __init__(self, index: int, detail: str = ""):
        self.index = index
        msg = f"perturbation component {index} outside its bounds"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


# --- tensor ---

class ShapeMismatch(MorphinkError):
    pass


class NotScalar(MorphinkError):
    pass


class NoTape(MorphinkError):
    pass


class TapeConsumed(MorphinkError):
    pass


class UnsupportedPrimitive(MorphinkError):
    pass


# --- geometry / capture ---

class DegenerateConfiguration(MorphinkError):
    pass


# --- training ---

class DivergedError(MorphinkError):
    pass


class EmptyEvalError(MorphinkError):
    pass


# --- warnings ---

class MorphinkWarning(UserWarning):
    pass


class DegenerateHeatmapWarning(MorphinkWarning):
    pass


class ConstantImageWarning(MorphinkWarning):
    pass


class NoConvergenceWarning(MorphinkWarning):
    pass


class InsufficientCapacityWarning(MorphinkWarning):
    pass
