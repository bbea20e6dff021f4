"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, mesh/parse errors -> 3,
SolverFailure -> 4.
"""


class DmrifemError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(DmrifemError):
    """Invalid or inconsistent run configuration."""


class MeshError(DmrifemError):
    """Invalid mesh topology or geometry."""


class DegenerateCellError(MeshError):
    def __init__(self, cell_id, detail=""):
        self.cell_id = cell_id
        msg = f"degenerate cell {cell_id}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class PeriodicPairingError(MeshError):
    """A boundary facet could not be matched to a translated partner."""


class ConstraintError(MeshError):
    """Periodic dof identification failed (non-matching mesh)."""


class ProjectionError(MeshError):
    """A quadrature point could not be located on the opposite face."""


class MshParseError(DmrifemError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshFormatError(DmrifemError):
    """Native mesh file is malformed."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"byte {offset}: {message}"
        super().__init__(message)


class SolverFailure(DmrifemError):
    def __init__(self, message, residuals=None, step=None):
        self.residuals = list(residuals) if residuals is not None else []
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
