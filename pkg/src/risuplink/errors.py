"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A scenario configuration violates an invariant."""


class GeometryError(ValueError):
    """A link distance is on the wrong side of the Rayleigh boundary."""


class InstanceTooLargeError(ValueError):
    """A brute-force reference was asked to enumerate too large an instance."""


class SolverError(RuntimeError):
    """An inner convex solve failed outright (not mere non-convergence)."""
