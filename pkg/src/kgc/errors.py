"""Exception types raised by the trajectory engine and its checks."""


class KGCError(Exception):
    """Base class for all library errors."""


class ConfigError(KGCError, ValueError):
    pass


class CFLViolation(ConfigError):
    pass


class JacobianCollapse(KGCError):
    """The label-to-position map stopped being invertible (J <= J_min)."""

    def __init__(self, site, t, value, stage=None):
        self.site = tuple(int(i) for i in site)
        self.t = float(t)
        self.value = float(value)
        self.stage = stage
        where = f" (RK4 stage {stage})" if stage is not None else ""
        super().__init__(
            f"Jacobian collapse at site {self.site}, t={self.t:.6g}: J={self.value:.3e}{where}"
        )


class DegenerateDensity(KGCError):
    def __init__(self, sites, threshold):
        self.sites = [tuple(int(i) for i in s) for s in sites]
        self.threshold = float(threshold)
        shown = ", ".join(str(s) for s in self.sites[:10])
        more = "" if len(self.sites) <= 10 else f" (+{len(self.sites) - 10} more)"
        super().__init__(
            f"density below threshold {self.threshold:.3e} at {len(self.sites)} site(s): {shown}{more}"
        )


class RegularWindowExceeded(KGCError):
    def __init__(self, site, t, tau):
        self.site = tuple(int(i) for i in site)
        self.t = float(t)
        self.tau = float(tau)
        super().__init__(
            f"internal time diverged at site {self.site}, t={self.t:.6g} (tau={self.tau:.3e})"
        )


class VelocitySingularity(KGCError):
    def __init__(self, label, t):
        self.label = tuple(int(i) for i in label)
        self.t = float(t)
        super().__init__(f"|dpsi/dt| vanished along path {self.label} at t={self.t:.6g}")


class InsufficientHistory(KGCError):
    pass


class NotApplicable(KGCError):
    pass


class SingularLabel(KGCError):
    pass


class RootNotBracketed(KGCError):
    pass
