"""Exception hierarchy.

Every error raised by the library derives from :class:`WSError`.  Errors tied
to one bag carry its id in ``bag_id`` so batch callers can report them.
"""


class WSError(Exception):
    """Base class for all library errors."""

    def __init__(self, message="", bag_id=None):
        super().__init__(message)
        self.bag_id = bag_id

    def with_bag(self, bag_id):
        """Return self tagged with ``bag_id`` (keeps an existing tag)."""
        if self.bag_id is None:
            self.bag_id = bag_id
        return self


class UnsupportedSetting(WSError):
    pass


class BadProbability(WSError):
    pass


class BagSizeMismatch(WSError):
    pass


class EvidenceKindMismatch(WSError):
    pass


class RankCheckFailed(WSError):
    pass


class InfeasibleBag(WSError):
    """A forward message collapsed to all zeros."""


class InfeasibleWeakLabel(WSError):
    """The observed weak label has probability zero under the model."""


class NormalizationFailure(WSError):
    pass


class DimensionMismatch(WSError):
    pass


class CapExceeded(WSError):
    pass


class ShapeMismatch(WSError):
    pass


class DegenerateFit(WSError):
    pass


class EmptyTestSet(WSError):
    pass


class SettingMismatch(WSError):
    pass


class IoFailure(WSError, OSError):
    pass


class VerificationFailure(WSError):
    """Two computations that must agree did not."""
