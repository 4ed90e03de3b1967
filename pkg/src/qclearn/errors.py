"""Exception hierarchy shared by every qclearn module.

Each error carries a ``code`` that the CLI maps onto a process exit status:
2 for usage problems, 3 for data problems, 4 for numeric failures.
"""


class QCLearnError(Exception):
    exit_code = 3


class MalformedEncoding(QCLearnError, ValueError):
    pass


class InvalidCircuit(QCLearnError, ValueError):
    pass


class EnsembleTooLarge(QCLearnError, ValueError):
    pass


class EnsembleExhausted(QCLearnError, ValueError):
    pass


class IndexOutOfRange(QCLearnError, IndexError):
    pass


class DegeneratePair(QCLearnError, ValueError):
    pass


class InvalidSecret(QCLearnError, ValueError):
    pass


class TooManyQubits(QCLearnError, ValueError):
    pass


class ShapeMismatch(QCLearnError, ValueError):
    pass


class EmptyDataset(QCLearnError, ValueError):
    pass


class OverlapDetected(QCLearnError, ValueError):
    pass


class VersionMismatch(QCLearnError, ValueError):
    pass


class CorruptCheckpoint(QCLearnError, ValueError):
    pass


class CorruptDataset(QCLearnError, ValueError):
    pass


class ConfigMismatch(QCLearnError, ValueError):
    pass


class InconsistentInput(QCLearnError, ValueError):
    exit_code = 4


class LengthMismatch(QCLearnError, ValueError):
    pass


class NumericFailure(QCLearnError, ArithmeticError):
    exit_code = 4
