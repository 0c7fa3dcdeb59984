"""Exception hierarchy.

``DataError`` subclasses signal bad input data or violated preconditions and
map to exit status 2 on the command line.
"""


class ExpertMatchError(Exception):
    pass


class DataError(ExpertMatchError):
    pass


class ParseError(DataError):
    def __init__(self, path, line_no, reason):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {reason}")


class DuplicateId(DataError):
    pass


class DanglingReference(DataError):
    pass


class EmptyDataset(DataError):
    pass


class InvalidRatio(DataError):
    pass


class TooFewQuestions(DataError):
    pass


class EmptyDocumentSet(DataError):
    pass


class EmptyQuery(DataError):
    pass


class VocabularyTooSmall(DataError):
    pass


class GuardExceeded(DataError):
    pass


class EmptyAfterFilter(DataError):
    pass


class FormatError(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class EmptyDistribution(DataError):
    pass


class EmptyText(DataError):
    pass


class NoCandidates(DataError):
    pass


class UnlabeledVariable(DataError):
    pass


class Diverged(ExpertMatchError):
    pass


class NotConverged(ExpertMatchError):
    """Raised only when the caller asks for strict convergence."""

    def __init__(self, residual):
        self.residual = residual
        super().__init__(f"message passing did not converge (residual={residual:.3g})")


class NoRelevant(DataError):
    pass


class NoResponses(DataError):
    pass


class TooManyCandidates(DataError):
    pass


class UnknownId(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""
