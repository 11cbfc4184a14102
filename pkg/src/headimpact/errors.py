"""Exception types shared across the package."""


class InvalidStateError(ValueError):
    """Operation called on data in the wrong state (e.g. wrong reference frame)."""


class NoIntersectionError(ValueError):
    """The impact line does not meet the helmet sphere."""


class DegenerateInputError(ValueError):
    """Input too small or singular for an estimator to produce a direction."""


class ParseError(ValueError):
    """A data file or manifest row failed validation."""


class SimulationDivergedError(RuntimeError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class UndefinedMetricError(ValueError):
    pass
