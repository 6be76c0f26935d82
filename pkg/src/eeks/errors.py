"""Exception hierarchy shared by the EEKS modules."""


class EeksError(Exception):
    """Base class for every error raised by this package."""


# schnorr
class InvalidParameters(EeksError):
    pass


class ParameterSearchExhausted(EeksError):
    pass


# directory
class DirectoryError(EeksError):
    pass


class NotFound(DirectoryError):
    pass


class AlreadyRevoked(DirectoryError):
    pass


class RevokedIdentityRequiresNewKey(DirectoryError):
    pass


class RootUnreachable(DirectoryError):
    pass


class DirectoryUnavailable(DirectoryError):
    pass


# sessions
class SessionError(EeksError):
    pass


class InvalidIdentity(SessionError):
    pass


class AlreadyRegistered(SessionError):
    pass


class PeerNotRegistered(SessionError):
    pass


class SignatureInvalid(SessionError):
    """Handshake signature does not verify under the claimed identity's key."""


class SenderRevoked(SessionError):
    pass


class SubgroupCheckFailed(SessionError):
    pass


class EphemeralErased(SessionError):
    pass


# envelopes
class EnvelopeError(EeksError):
    pass


class NoSession(EnvelopeError):
    pass


class RecipientRevoked(EnvelopeError):
    pass


class Expired(EnvelopeError):
    pass


class IntegrityFailure(EnvelopeError):
    pass


class FingerprintInvalid(EnvelopeError):
    pass


class WrongSession(EnvelopeError):
    pass


class MalformedEnvelope(EnvelopeError):
    pass


# protocol
class ProtocolError(EeksError):
    pass


class CommandSyntaxError(ProtocolError):
    """Maps to reply 501."""


class UnknownVerb(ProtocolError):
    pass


# simulator
class ScriptInvalid(EeksError):
    def __init__(self, message: str, index: int | None = None):
        self.index = index
        if index is not None:
            message = f"action {index}: {message}"
        super().__init__(message)
