"""Exception hierarchy shared by every flowmine module."""


class FlowmineError(Exception):
    """Base class; the CLI maps subclasses onto exit codes."""

    exit_code = 3


class ParseError(FlowmineError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class DuplicateMessage(FlowmineError):
    pass


class UnknownId(FlowmineError):
    def __init__(self, msg_id, line=None, position=None):
        self.msg_id = msg_id
        self.line = line
        self.position = position
        loc = ""
        if line is not None:
            loc = f" (line {line}, position {position})"
        super().__init__(f"unknown message id {msg_id}{loc}")


class InvalidFlow(FlowmineError):
    pass


class InvariantViolation(FlowmineError):
    """Raised when an internally produced object breaks its invariants."""


class NoPath(FlowmineError):
    def __init__(self, start, end):
        self.start = start
        self.end = end
        super().__init__(f"no path from {start} to {end}")


class EmptyCorpus(FlowmineError):
    pass


class NoOccurrence(FlowmineError):
    def __init__(self, msg_id):
        self.msg_id = msg_id
        super().__init__(f"message {msg_id} does not occur in the traces")


class NonFiniteLoss(FlowmineError):
    exit_code = 4

    def __init__(self, epoch):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}")


class VersionMismatch(FlowmineError):
    pass


class CorruptFile(FlowmineError):
    pass


class InfeasibleCorruption(FlowmineError):
    pass


class BudgetExceeded(FlowmineError):
    exit_code = 5

    def __init__(self, lower_bound, nodes):
        self.lower_bound = lower_bound
        self.nodes = nodes
        super().__init__(
            f"search budget exhausted after {nodes} nodes; "
            f"best rate found {lower_bound:.4f} is a lower bound")


class UnmatchedPair(FlowmineError):
    pass
