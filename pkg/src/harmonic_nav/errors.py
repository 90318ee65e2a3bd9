"""Exception types shared across the library."""

from __future__ import annotations


class HarmonicNavError(Exception):
    """Base class for all library-specific errors."""


class OutsideBoundary(HarmonicNavError):
    """An obstacle was inserted partly or fully outside the workspace."""


class OverlapAmbiguous(HarmonicNavError):
    """A new obstacle overlaps more than one existing obstacle, so it
    cannot be attached to a unique tree."""


class AtGoal(HarmonicNavError):
    """A direction query was made exactly at the goal point."""


class Diverged(HarmonicNavError):
    """A field integral curve left the free space."""


class DegenerateSwitchTerm(HarmonicNavError):
    """The recursive switch-term update hit a vanishing denominator."""


class FitDiverged(HarmonicNavError):
    """Shape fitting did not reach an acceptable residual."""


class Disconnected(HarmonicNavError):
    """No path exists between the requested tree vertices."""


class RankDeficient(HarmonicNavError):
    """The weight regression system does not determine the weights."""


class NoAcceptingRun(HarmonicNavError):
    """The product automaton admits no accepting prefix-suffix run."""


class ParseError(HarmonicNavError):
    """An automaton or scenario document is malformed."""


class DanglingState(HarmonicNavError):
    """An automaton transition references an undeclared state."""


class MissionFailed(HarmonicNavError):
    """A simulated mission could not be completed."""
