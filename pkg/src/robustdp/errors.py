"""Exception hierarchy for the solver and its diagnostics.

Every failure mode that a caller may want to branch on gets its own class;
anything carrying provenance (a node id, a failing clause) stores it as an
attribute so reports can name the offender.
"""


class RobustDPError(Exception):
    """Base class for all library errors."""


# --- parsing / model validation -------------------------------------------

class ParseError(RobustDPError):
    """Input bytes are not valid JSON / not the expected document shape."""


class StructureError(RobustDPError):
    """Scenario tree violates its structural invariants."""


class ProbabilityError(RobustDPError):
    """A probability vector fails nonnegativity or normalization."""


class UnknownNode(RobustDPError):
    """A node id does not exist in the tree."""


class UnknownLeaf(RobustDPError):
    """A leaf id is outside a random utility's leaf domain."""


class WeightError(RobustDPError):
    """Integration weights are not a probability vector."""


class ParameterError(RobustDPError):
    """A recipe or operation received an out-of-range parameter."""


class LambdaError(RobustDPError):
    """A prior-mixing coefficient is outside (0, 1]."""


# --- geometry ---------------------------------------------------------------

class DegenerateError(RobustDPError):
    """Support points are not finite vectors."""


class NoArbitrageViolation(RobustDPError):
    """No quantitative margin exists: some direction never loses but can gain."""


class NAFailure(RobustDPError):
    """0 is not in the relative interior of a node's one-step support hull."""

    def __init__(self, node, witness=None, message=None):
        self.node = node
        self.witness = witness
        super().__init__(message or f"no-arbitrage fails at node {node!r}")


# --- elasticity / utility certification -------------------------------------

class DomainError(RobustDPError):
    """The elasticity ratio is undefined on the whole scan tail."""


class RAEViolation(RobustDPError):
    """Neither elasticity side admits the requested growth exponent."""


class SearchExhausted(RobustDPError):
    """An anchor search ran past its wealth cap without succeeding."""


class CertificationFailure(RobustDPError):
    """A clause of the moment-controlled utility certification failed.

    Attributes: ``clause`` names the failing clause, ``witness`` is the
    offending (leaf, x, lambda) sample when one exists, ``report`` carries
    the partial per-clause evidence gathered before the failure.
    """

    def __init__(self, clause, witness=None, report=None):
        self.clause = clause
        self.witness = witness
        self.report = report
        super().__init__(f"certification failed on clause {clause!r} (witness={witness!r})")


class AssumptionFailure(RobustDPError):
    """A solver assumption fails on the instance.

    ``assumption`` is a short token ('pb_inequality', 'p_star', 'lower_bar',
    ...); ``node`` localizes the failure when the instance sits in a tree.
    """

    def __init__(self, assumption, node=None, message=None):
        self.assumption = assumption
        self.node = node
        super().__init__(message or f"assumption {assumption!r} fails"
                         + (f" at node {node!r}" if node is not None else ""))


class NtUnbounded(RobustDPError):
    """The wealth-threshold search for a value function exceeded its cap."""

    def __init__(self, node, message=None):
        self.node = node
        super().__init__(message or f"wealth threshold unbounded at node {node!r}")


class ClosureCheckError(RobustDPError):
    """A value function failed its right-continuity spot check."""


# --- generators / oracle -----------------------------------------------------

class GenerationExhausted(RobustDPError):
    """Rejection sampling gave up after too many rejected draws."""


class BetaNotFound(RobustDPError):
    """No positive uniform loss-probability margin exists for a prior family."""


class OracleTooLarge(RobustDPError):
    """The requested brute-force enumeration exceeds the hard size cap."""
