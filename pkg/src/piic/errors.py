"""Exception types raised across the package."""


class ValidationError(ValueError):
    """Inconsistent dimensions, invalid parameters, or non-finite inputs."""


class NumericalError(ArithmeticError):
    pass


class EStepError(NumericalError):
    def __init__(self, message, t=None, iteration=None):
        self.t = t
        self.iteration = iteration
        where = [] if t is None else [f"t={t}"]
        if iteration is not None:
            where.append(f"iteration={iteration}")
        super().__init__(f"E-step failed ({', '.join(where) or 'unknown step'}): {message}")


class MStepError(NumericalError):
    def __init__(self, message, t=None, p=None, iteration=None):
        self.t = t
        self.p = p
        self.iteration = iteration
        where = [f"{k}={v}" for k, v in (("t", t), ("p", p), ("iteration", iteration)) if v is not None]
        super().__init__(f"M-step failed ({', '.join(where) or 'unknown step'}): {message}")


class DivergenceError(NumericalError):
    def __init__(self, message, step=None):
        self.step = step
        super().__init__(f"rollout diverged at step {step}: {message}")
