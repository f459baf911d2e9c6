"""Mine message-flow specifications from interleaved SoC traces."""
__version__ = "0.1.0"

from .causality import CausalityGraph, build_graph, reachable_subgraph, to_dot
from .core import Catalog, FlowSpec, Message, Trace, causal, causality_slice
from .evaluator import EvalReport, compare_flows, evaluate_greedy, evaluate_oracle
from .miner import MinedFlow, mine, to_flowspec
from .synthgen import GenConfig, generate, generate_negative

__all__ = [
    "CausalityGraph", "Catalog", "EvalReport", "FlowSpec", "GenConfig", "Message",
    "MinedFlow", "Trace", "build_graph", "causal", "causality_slice", "compare_flows",
    "evaluate_greedy", "evaluate_oracle", "generate", "generate_negative", "mine",
    "reachable_subgraph", "to_dot", "to_flowspec",
]
