"""Exception hierarchy shared by every module."""


class InvalidInputError(ValueError):
    """An operation received arguments outside its contract."""


class ConfigError(ValueError):
    """A configuration document is invalid.

    ``path`` is the dotted location of the offending field, e.g.
    ``train.teacher.lr``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ConllParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointFormatError(CheckpointError):
    """Truncated or structurally malformed checkpoint file."""


class CheckpointIntegrityError(CheckpointError):
    """Payload bytes do not match their recorded digest."""


class CheckpointShapeError(CheckpointError):
    def __init__(self, block: str, message: str):
        self.block = block
        super().__init__(f"block {block!r}: {message}")
