"""Exception types shared across the simulator and toolchain."""


class StrelaError(Exception):
    """Base class for all simulator/toolchain errors."""


class PreconditionViolation(StrelaError):
    """An engine bug: a firing contradicts cycle-start state."""


class InvalidConfig(StrelaError):
    pass


class InvalidDimensions(StrelaError):
    pass


class CombinationalLoop(StrelaError):
    pass


class Deadlock(StrelaError):
    def __init__(self, msg, dump=None):
        super().__init__(msg)
        self.dump = dump or {}


class Timeout(StrelaError):
    def __init__(self, msg, dump=None):
        super().__init__(msg)
        self.dump = dump or {}


class OutOfBounds(StrelaError):
    pass


class NotInterleavedRegion(StrelaError):
    pass


class MalformedConfigStream(StrelaError):
    pass


class UnknownRegister(StrelaError):
    pass


class BusyWrite(StrelaError):
    pass


class ParseError(StrelaError):
    def __init__(self, msg, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(msg + loc)
        self.line = line
        self.column = column


class UnboundStream(StrelaError):
    pass


class Unroutable(StrelaError):
    def __init__(self, edge, reason):
        super().__init__(f"cannot route edge {edge}: {reason}")
        self.edge = edge
        self.reason = reason


class UnrollIllegal(StrelaError):
    pass


class DimensionMismatch(StrelaError):
    pass


class OracleMismatch(StrelaError):
    def __init__(self, kernel, address, got, expected):
        super().__init__(
            f"{kernel}: output mismatch at 0x{address:05x}: got {got}, expected {expected}")
        self.kernel = kernel
        self.address = address
        self.got = got
        self.expected = expected
