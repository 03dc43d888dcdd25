from .cells import (
    CANDIDATE_OPS,
    ArchParams,
    Cell,
    DerivedExtractor,
    SupernetExtractor,
    gumbel_softmax,
)
from .cost import agent_flops, candidate_op_flops, cell_cost_table, supernet_expected_flops
from .search import SearchConfig, SearchResult, cost_loss, derive, retrain_derived, search

__all__ = [
    "CANDIDATE_OPS",
    "ArchParams",
    "Cell",
    "DerivedExtractor",
    "SearchConfig",
    "SearchResult",
    "SupernetExtractor",
    "agent_flops",
    "candidate_op_flops",
    "cell_cost_table",
    "cost_loss",
    "derive",
    "gumbel_softmax",
    "retrain_derived",
    "search",
    "supernet_expected_flops",
]
