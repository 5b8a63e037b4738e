"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor dimensions do not satisfy an operation's contract."""


class SpecError(ValueError):
    """A layer or module configuration violates its invariants."""


class DataError(ValueError):
    """Input data is structurally valid but semantically wrong (bad labels, missing modality)."""


class FormatError(ValueError):
    """An on-disk artifact (volume, checkpoint, manifest) is malformed."""
