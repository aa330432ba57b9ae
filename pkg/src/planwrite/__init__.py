"""Two-stage data-to-text generation: select and order table records, then write."""

from .corpus import DatasetExample, generate_corpus, load_dataset, save_dataset
from .datamodel import ContentPlan, Record, RecordTable, Summary, Vocabulary
from .evaluation import MetricReport, evaluate_corpus, render_template
from .inference import generate
from .model import ModelConfig, ModelParams
from .training import TrainConfig, train

__all__ = [
    "ContentPlan", "DatasetExample", "MetricReport", "ModelConfig", "ModelParams", "Record", "RecordTable",
    "Summary", "TrainConfig", "Vocabulary", "evaluate_corpus", "generate", "generate_corpus", "load_dataset",
    "render_template", "save_dataset", "train",
]
__version__ = "0.1.0"
