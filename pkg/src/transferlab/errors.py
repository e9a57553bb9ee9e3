"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """A public operation was called with arguments violating its contract
    (shape mismatch, empty dataset, out-of-range label, singular system)."""


class NumericsError(RuntimeError):
    """A numerical procedure failed (divergence, non-finite values)."""
