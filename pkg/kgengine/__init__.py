"""Knowledge-graph embeddings with low-rank entity tables, self-supervised
fine-grained entity typing, and typing-aware candidate inference."""
from kgengine.common import KGEngineError
from kgengine.graph import KnowledgeGraph, from_triples, load_knowledge_graph
from kgengine.models import ScoringModel, init_model
from kgengine.typing_model import TypingNetwork

__all__ = [
    'KGEngineError',
    'KnowledgeGraph',
    'ScoringModel',
    'TypingNetwork',
    'from_triples',
    'init_model',
    'load_knowledge_graph',
]
