"""Exception types raised by the simulator."""


class DomainError(ValueError):
    """A parameter lies outside the physical domain the model covers."""


class NonPhysicalState(ValueError):
    """A density matrix failed the Hermiticity, trace or positivity checks."""


class LeakageExceeded(RuntimeError):
    """Truncating the Fock space discarded more probability than allowed."""

    def __init__(self, leakage, bound, where=""):
        self.leakage = float(leakage)
        self.bound = float(bound)
        msg = f"truncation leakage {self.leakage:.3g} exceeds bound {self.bound:.3g}"
        if where:
            msg += f" ({where})"
        super().__init__(msg)


class CalibrationOutOfRange(ValueError):
    """The calibration target cannot be bracketed by the allowed parameter range."""

    def __init__(self, target, low, high):
        self.target = float(target)
        self.low = float(low)
        self.high = float(high)
        super().__init__(
            f"target {self.target:.6g} outside reachable range "
            f"[{self.low:.6g}, {self.high:.6g}] for f_x in [0, 1]"
        )


class StepSizeTooCoarse(RuntimeError):
    """Halving the number of integrator steps changed the result too much."""


class ConfigError(ValueError):
    """Invalid configuration file content."""
