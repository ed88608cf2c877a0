"""Exception types shared across the toolkit."""


class MessError(Exception):
    """Base class for all toolkit errors."""


# --- tensor / manifest / cost-profile I/O ---

class MissingFile(MessError):
    pass


class BadMagic(MessError):
    pass


class DimMismatch(MessError):
    pass


class NonFiniteValue(MessError):
    pass


class InvalidDistribution(MessError):
    """Per-pixel class probabilities out of range or not summing to one."""


class ParseError(MessError):
    pass


class MissingReferencedFile(MessError):
    """One or more files referenced by a manifest do not exist."""

    def __init__(self, paths):
        self.paths = [str(p) for p in paths]
        super().__init__("missing referenced files: " + ", ".join(self.paths))


class InconsistentExitSet(MessError):
    pass


class NonPositiveCost(MessError):
    pass


# --- exit placement ---

class TooManyExits(MessError):
    pass


class DuplicatePlacement(MessError):
    pass


# --- confidence ---

class DegenerateClassCount(MessError):
    pass


# --- metrics ---

class OutOfRangeClass(MessError):
    pass


class EmptyMatrix(MessError):
    pass


# --- losses ---

class EmptySelection(MessError):
    pass


# --- search ---

class EmptySpace(MessError):
    pass


class MissingExitRates(MessError):
    pass


class ConfigSettingMismatch(MessError):
    pass


class UnknownArch(MessError):
    pass


# --- simulation / fixtures ---

class ManifestMismatch(MessError):
    pass


class BadLadder(MessError):
    pass
