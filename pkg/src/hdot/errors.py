"""Exception hierarchy shared by the runtime, the rank layer and the CLI."""


class HdotError(Exception):
    pass


class RuntimeClosedError(HdotError):
    """Raised when tasks are spawned after the runtime shut down."""


class ContainmentError(HdotError):
    """A nested task declared a strong access outside its parent's regions."""


class ReductionError(HdotError):
    pass


class ProtocolError(HdotError):
    """Misuse of the request/notification or message-matching protocol."""


class DeadlockError(HdotError):
    """Raised when the watchdog (or the serial scheduler) finds no progress."""


class TaskError(HdotError):
    """Wraps an exception raised inside a task body."""


class GrainsizeError(HdotError, ValueError):
    """A grainsize that breaks halo alignment between neighbouring ranks."""
