"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with inputs outside its declared preconditions."""


class BackendError(RuntimeError):
    """The model endpoint could not produce a response after its transport retries."""


class ScriptExhausted(RuntimeError):
    """A scripted backend was asked for more responses than it was given.

    Deliberately not a BackendError so it escapes the agent loop and fails the test.
    """


class UncorrectableToolCall(ValueError):
    """A tool call could not be repaired into a call against the registry."""
