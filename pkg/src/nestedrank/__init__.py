"""Identifying the best item or the full ranking from choice-based feedback."""

from .choice_model import (
    MNLChoiceEstimator,
    MNLPreference,
    OAPreference,
    Ranking,
    TabularPreference,
    min_separation,
)
from .policies import (
    NestedElimination,
    NestedEliminationRanking,
    NestedPartition,
    RepeatedNestedElimination,
    m_for_rank,
    m_for_select,
)
from .rng import RandomStream

__version__ = "0.1.0"
