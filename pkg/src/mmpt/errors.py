"""Exception hierarchy for data problems (CLI exit code 2)."""


class DataError(ValueError):
    pass


class MalformedRecordError(DataError):
    pass


class AtomicNumberError(DataError):
    pass


class DuplicatePositionError(DataError):
    pass


class DegenerateCellError(DataError):
    pass
