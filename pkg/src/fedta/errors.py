"""Exception types shared across the package."""


class NumericsError(RuntimeError):
    """A value that should be finite is not (divergent state, gradient, ...)."""


class DegenerateDynamicsError(ValueError):
    """Dynamics parameters describe a degenerate system (e.g. zero continuous pole)."""


class SingularAdaptationError(ValueError):
    """The integral adaptation rule hit a (near-)singular (A - I) factor."""


class IncompatibleMethodError(ValueError):
    """Adaptation method does not apply to the given neuron parameterization."""


class FederationError(RuntimeError):
    """A communication round failed; carries the offending client id in the message."""


class ConfigError(ValueError):
    """An experiment configuration file is invalid."""
