"""Evaluation workloads; each returns a :class:`WorkloadReport`."""

from .bulk import run_bulk
from .common import CorrectnessError, ProtocolError, WorkloadReport
from .db import run_db_filter, run_db_sum, selectivity_bounds
from .gups import run_gups
from .pagerank import run_pagerank, scaling_grid
from .pipe_bench import pipe_rtt, run_pipe_bench
from .uts import Tree, TreeSpec, credit_termination, gen_tree, run_uts

__all__ = [
    "CorrectnessError", "ProtocolError", "WorkloadReport", "Tree", "TreeSpec", "credit_termination",
    "gen_tree", "pipe_rtt", "run_bulk", "run_db_filter", "run_db_sum", "run_gups", "run_pagerank",
    "run_pipe_bench", "run_uts", "scaling_grid", "selectivity_bounds",
]
