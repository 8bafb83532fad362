"""Exception and warning types raised across the pipeline.

Every exception carries a ``code`` used by the CLI to build the
machine-readable error report and pick an exit status.
"""


class VolleyError(Exception):
    code = "VolleyError"
    exit_status = 2

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"error": self.code, "message": str(self)}
        out.update({k: v for k, v in self.details.items() if v is not None})
        return out


# --- ingest -----------------------------------------------------------------

class MissingColumn(VolleyError):
    code = "MissingColumn"


class RowRejected(VolleyError):
    """A single row failed validation (raised only in strict mode)."""

    code = "RowRejected"


class AmbiguousLibero(VolleyError):
    code = "AmbiguousLibero"


class IncompleteLineup(VolleyError):
    code = "IncompleteLineup"


class InconsistentWinner(VolleyError):
    code = "InconsistentWinner"


class NonAlternatingPossession(VolleyError):
    code = "NonAlternatingPossession"


# --- markov -----------------------------------------------------------------

class UnencodableContact(VolleyError):
    code = "UnencodableContact"


class NonConvergent(VolleyError):
    code = "NonConvergent"
    exit_status = 3


class NoSupport(VolleyError):
    code = "NoSupport"


# --- mixed effects ------------------------------------------------------------

class SingularDesign(VolleyError):
    code = "Singular"
    exit_status = 3


class NotConverged(VolleyError):
    code = "NotConverged"
    exit_status = 3


class UnknownFactor(VolleyError):
    code = "UnknownFactor"


# --- sos / attribution --------------------------------------------------------

class MissingState(VolleyError):
    code = "MissingState"


class UnlabelableOutcome(VolleyError):
    code = "UnlabelableOutcome"


class NoAlignment(VolleyError):
    code = "NoAlignment"


class UnknownModel(VolleyError):
    code = "UnknownModel"


class MissingRatio(VolleyError):
    code = "MissingRatio"


class UnknownEntity(VolleyError):
    code = "UnknownEntity"


class DegenerateSeason(VolleyError):
    code = "DegenerateSeason"


class InsufficientClassData(VolleyError):
    code = "InsufficientClassData"


class InvalidConfig(VolleyError):
    code = "InvalidConfig"


# --- warnings -----------------------------------------------------------------

class DegenerateSplit(UserWarning):
    """Both variance components are zero; credit is split evenly."""


class DroppedFactor(UserWarning):
    """A grouping factor with fewer than two levels was removed from a fit."""


class ConvergenceWarning(UserWarning):
    pass
