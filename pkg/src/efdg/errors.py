"""Exception types shared across the package."""


class NonManifoldError(ValueError):
    """An edge is shared by more than two triangles."""


class DuplicateTriangleError(ValueError):
    """The same vertex triple appears twice in a triangle list."""


class StructureViolationError(RuntimeError):
    """The split matrix does not show the expected block structure."""


class NotPositiveDefiniteError(RuntimeError):
    """A diagonal that must be strictly positive is not."""


class SingularOperatorError(RuntimeError):
    """The fitting operator has a zero diagonal entry."""


class SingularBlockError(RuntimeError):
    """A diagonal block of the Gauss-Seidel sweep is singular."""

    def __init__(self, block_id: int, msg: str = ""):
        self.block_id = block_id
        super().__init__(msg or f"singular diagonal block {block_id}")


class BlockSizeLimitError(RuntimeError):
    """A strongly connected component exceeds the configured size limit."""
