"""Exception types raised across the package.

Every error is a subclass of TrgpError so callers can catch the whole
family; the CLI maps them onto exit codes.
"""


class TrgpError(Exception):
    """Base class for all package errors."""


# -- dense linear algebra ---------------------------------------------------

class EmptyMatrix(TrgpError):
    """Matrix with zero rows or zero columns where a non-empty one is required."""


class NumericalFailure(TrgpError):
    """Iterative routine failed to converge within its sweep budget."""


class DimensionMismatch(TrgpError):
    """Operand shapes are incompatible."""


class NonOrthonormalBasis(TrgpError):
    """Basis matrix fails the orthonormality check beyond tolerance."""


# -- subspace construction --------------------------------------------------

class ZeroMatrix(TrgpError):
    """All-zero representation matrix; no energy threshold can be met."""


class ThresholdUnreachable(TrgpError):
    """Available spectral energy cannot reach the requested fraction."""


class EmptyDataset(TrgpError):
    """Dataset slice contains no samples."""


class ShapeMismatch(TrgpError):
    """Data width does not match the model layer width."""


# -- network ----------------------------------------------------------------

class NonFiniteLoss(TrgpError):
    """Forward pass produced a NaN or infinite loss."""


class TraceMismatch(TrgpError):
    """Backward pass received a trace from a different model or selection set."""


class EmptyBatch(TrgpError):
    """Probe or training batch contains no samples."""


class ZeroGradient(TrgpError):
    """Projection ratio is undefined for an all-zero gradient."""


# -- training ---------------------------------------------------------------

class DivergedLoss(TrgpError):
    """Training loss became non-finite."""


class AlreadyFinalized(TrgpError):
    """Task finalization was requested twice for the same task."""


# -- benchmarks -------------------------------------------------------------

class EmptyBase(TrgpError):
    """Base dataset for stream generation is empty."""


class InvalidGeometry(TrgpError):
    """Synthetic stream requests more directions than the ambient dimension."""


class BadMagic(TrgpError):
    """IDX file magic number does not match the expected constant."""


class TruncatedFile(TrgpError):
    """IDX file ends before the declared payload."""


class CountMismatch(TrgpError):
    """Image and label files declare different item counts."""


class BwtUndefined(TrgpError):
    """Backward transfer needs at least two tasks."""


# -- CLI / configuration ----------------------------------------------------

class ConfigInvalid(TrgpError):
    """Configuration failed validation; message names the offending field."""


class NoRunsFound(TrgpError):
    """Report directory contains no results files."""


class SchemaMismatch(TrgpError):
    """A results file does not match the expected schema."""
