class CurriculumError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(CurriculumError, ValueError):
    pass


class AlignmentError(CurriculumError, ValueError):
    def __init__(self, message: str, counts: tuple[int, int]):
        super().__init__(message)
        self.counts = counts


class IncompatibleArtifactError(CurriculumError):
    """An input artifact was produced under a different config or upstream input."""


class ScoringError(CurriculumError):
    def __init__(self, message: str, example_id: int):
        super().__init__(message)
        self.example_id = example_id


class TraceParseError(CurriculumError, ValueError):
    pass
