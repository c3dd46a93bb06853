"""Exception types shared across the package."""


class PeerlearnError(Exception):
    """Base class for every error raised by this package."""


class NotPositiveDefinite(PeerlearnError):
    """A matrix required to be positive-definite failed factorization."""


class EmptyInput(PeerlearnError):
    """An operation received an empty vector or collection."""


class DimMismatch(PeerlearnError):
    """Vector/matrix dimensions disagree with the declared embedding dim."""


class BadMagic(PeerlearnError):
    """A fixture file does not start with the expected magic bytes."""


class LabelOutOfRange(PeerlearnError):
    """A record label index is >= the declared class count."""


class TruncatedFile(PeerlearnError):
    """A fixture file ended before the declared payload was read."""


class MissingClassSamples(PeerlearnError):
    """A training split does not cover every class at least once."""


class ZeroNormRow(PeerlearnError):
    """A weight row has zero p-norm and cannot be normalized."""


class MixedNormModes(PeerlearnError):
    """Heads with different normalization modes cannot be concatenated."""


class ShapeMismatch(PeerlearnError):
    """An input does not match the backbone's expected input shape."""


class EmptySelection(PeerlearnError):
    """A feature-selection result is empty where at least one is required."""


class TooFewSamples(PeerlearnError):
    """Fewer samples than mixture components."""


class DuplicateTask(PeerlearnError):
    """A task id is already present in a bank or agent state."""


class EmptyBank(PeerlearnError):
    """A task-mapper bank contains no components."""


class EmptyClass(PeerlearnError):
    """A class has no samples where at least one is required."""


class SingularAfterRegularization(PeerlearnError):
    """Tied covariance stayed singular even after adding the ridge term."""


class NotFinalized(PeerlearnError):
    """Inference was requested before consolidation finished."""


class NotAllReceived(PeerlearnError):
    """Finalize was called before every expected packet arrived."""


class UnknownSender(PeerlearnError):
    """Broadcast requested for an agent that is not in the roster."""


class ZeroNormEmbedding(PeerlearnError):
    """A label embedding has zero norm; cosine similarity is undefined."""


class CountMismatch(PeerlearnError):
    """Number of label embeddings differs from the registered class count."""


class TaskNeverLearned(PeerlearnError):
    """A history query referenced a task that has no learning checkpoint."""


class DuplicateName(PeerlearnError):
    """A name appears twice where uniqueness is required."""


class ConfigInvalid(PeerlearnError):
    """A run config failed validation; carries the full violation list."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class IoError(PeerlearnError):
    """Wrapper for OS-level failures while writing fixtures or reports."""
