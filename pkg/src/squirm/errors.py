"""Exception hierarchy shared across the solver stack."""


class SquirmError(Exception):
    """Base class for all package errors."""


class MeshError(SquirmError):
    """Invalid mesh geometry or connectivity request."""


class DegenerateEdgeError(MeshError):
    """Element axis edge (local nodes 1-2) collapsed below tolerance."""


class GrowthBoundError(SquirmError):
    """Growth value drives det(F_g) = 1 + u non-positive."""

    def __init__(self, u):
        self.u = float(u)
        super().__init__(f"growth value u={self.u} violates 1 + u > 0")


class ElementInversionError(SquirmError):
    """Elastic Jacobian J_e <= 0 at some quadrature point."""

    def __init__(self, element, j_e):
        self.element = int(element)
        self.j_e = float(j_e)
        super().__init__(
            f"element {self.element} inverted: J_e={self.j_e:.3e} <= 0"
        )


class NewtonDivergenceError(SquirmError):
    """Newton loop failed to reach tolerance, even after step halving."""

    def __init__(self, step, residual_norm, detail=""):
        self.step = step
        self.residual_norm = float(residual_norm)
        msg = f"Newton failed at step {step}: |g|={self.residual_norm:.3e}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class SingularOperatorError(SquirmError):
    """A velocity tangent required to be nonsingular could not be factorised."""


class ConfigError(SquirmError):
    """Scenario configuration invalid; collects every failure at once."""

    def __init__(self, messages):
        if isinstance(messages, str):
            messages = [messages]
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))
