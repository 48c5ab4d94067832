"""sqlgov: knowledge-base-assisted SQL governance toolkit.

Fragment decomposition plus four tools (rewriter, equivalence verifier,
modifier, syntax corrector) over a self-learning knowledge base, fully
testable offline through deterministic provider mocks.
"""

from .fragmenter import Fragment, FragmentTree, decompose, decompose_lenient, fragment_at
from .knowledge_base import (
    KnowledgeSnapshot,
    KnowledgeStore,
    cosine_similarity,
    load_snapshot,
    save_snapshot,
)
from .providers import HashingEmbedding, PromptEnvelope, ScriptedLLM, SimulatedExecutor
from .sqltext import templatize

__version__ = "0.1.0"

__all__ = [
    "Fragment",
    "FragmentTree",
    "decompose",
    "decompose_lenient",
    "fragment_at",
    "KnowledgeSnapshot",
    "KnowledgeStore",
    "cosine_similarity",
    "load_snapshot",
    "save_snapshot",
    "HashingEmbedding",
    "PromptEnvelope",
    "ScriptedLLM",
    "SimulatedExecutor",
    "templatize",
    "__version__",
]
