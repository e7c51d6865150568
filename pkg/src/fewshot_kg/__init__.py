"""Few-shot link prediction on knowledge graphs, with null-model probes of what the models learn."""

from .kg import Dataset, KnowledgeGraph, ParseError, Vocab, load_dataset, parse_triples
from .model import VARIANTS, HyperParams, ModelState, init_state
from .optim import TrainConfig
from .tasks import FewShotTask, RelationSplit, TaskError

__all__ = [
    "Dataset", "KnowledgeGraph", "ParseError", "Vocab", "load_dataset", "parse_triples",
    "VARIANTS", "HyperParams", "ModelState", "init_state", "TrainConfig",
    "FewShotTask", "RelationSplit", "TaskError",
]
__version__ = "0.1.0"
