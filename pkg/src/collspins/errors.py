"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Invalid spin arrangement (coincident sites, bad dipole, empty list)."""


class CapacityError(RuntimeError):
    """Requested an exact/dense representation for too many spins."""


class IntegrationError(RuntimeError):
    """The ODE integrator could not advance the solution.

    ``t_reached`` holds the last time the solution was successfully advanced to.
    """

    def __init__(self, message, t_reached):
        super().__init__(message)
        self.t_reached = t_reached
