"""Exception hierarchy shared by every layer of the simulator."""

from __future__ import annotations


class GasError(Exception):
    """Base class for all errors raised by hetgas."""


# -- packet format ---------------------------------------------------------

class InvalidMessage(GasError, ValueError):
    """An ActiveMessage violates one of its structural invariants."""


class TooManyArgs(InvalidMessage):
    pass


class ShortWithPayload(InvalidMessage):
    pass


class ShortWithDestOffset(InvalidMessage):
    pass


class MediumTooLarge(InvalidMessage):
    pass


class MediumWithDestOffset(InvalidMessage):
    pass


class FieldOutOfRange(InvalidMessage):
    pass


class DecodeError(GasError, ValueError):
    """Raw bytes or words could not be parsed."""


class Truncated(DecodeError):
    pass


class UnknownKind(DecodeError):
    pass


class ReservedNonzero(DecodeError):
    pass


class TrailingBytes(DecodeError):
    pass


# -- memory ----------------------------------------------------------------

class ZeroSize(GasError, ValueError):
    pass


class OutOfBounds(GasError, IndexError):
    pass


# -- engine ----------------------------------------------------------------

class InvalidCommand(GasError, ValueError):
    pass


class UnknownOpcode(DecodeError):
    pass


class BadToken(GasError):
    pass


class BounceFull(GasError):
    """Every bounce buffer is held; the packet must be retried later."""


class ReplyToReply(GasError):
    pass


class DoubleComplete(GasError):
    pass


# -- network / bridge ------------------------------------------------------

class UnknownNode(GasError, LookupError):
    pass


class EmptyPacket(GasError, ValueError):
    pass


class BadPacketLength(GasError, ValueError):
    pass


class UnroutableNode(GasError, LookupError):
    pass


class LinkError(GasError):
    pass


# -- software runtime ------------------------------------------------------

class InvalidArgs(GasError, ValueError):
    pass


class ReservedId(GasError, ValueError):
    pass


class DuplicateId(GasError, ValueError):
    pass


class NotARequest(GasError):
    pass


class AlreadyReplied(GasError):
    pass


class HandlerRestriction(GasError):
    """A handler attempted an operation only legal outside handler context."""


class RequestInHandler(HandlerRestriction):
    pass


class BlockingInHandler(HandlerRestriction):
    pass


class OutOfBoundsRemote(GasError):
    pass


class OutOfBoundsLocal(GasError, IndexError):
    pass


class BarrierMismatch(GasError):
    pass


class BarrierStateError(GasError):
    """notify/wait called out of order."""


# -- configuration / harness -----------------------------------------------

class ConfigError(GasError):
    pass


class ParseError(ConfigError):
    pass


class ConfigInvalid(ConfigError):
    pass


class DuplicateRank(ConfigError):
    pass


class NonTotalRouting(ConfigError):
    pass


class UnknownRank(ConfigError, LookupError):
    pass


class AppFailure(GasError):
    pass


class CycleLimitExceeded(GasError):
    pass


class BadPartition(InvalidArgs):
    pass
