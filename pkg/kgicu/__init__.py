import logging
import sys

logger = logging.getLogger(__name__)
handler = logging.StreamHandler(sys.stdout)
logger.addHandler(handler)
logger.setLevel(logging.INFO)

from .version import __version__, __version_info__  # noqa: E402
from .errors import KgIcuError  # noqa: E402
from .autodiff import (Tensor, Tape, ParameterSet, OptimizerState,  # noqa
                       backward, grad_check, optimizer_step)
from .knowledge import (Vocabulary, GlobalKnowledgeGraph,  # noqa: E402
                        build_global_kg, extract_concepts, query_subgraph)
from .encoder import StepEncoder, AttentionRecord  # noqa: E402
from .sequence import TaskKind  # noqa: E402
from .config import TrainConfig  # noqa: E402
from .data import Episode, NoteRecord, Dataset, load_dataset  # noqa: E402
from .model import KnowledgeModel, load_checkpoint  # noqa: E402
from .metrics import MetricReport, compute_metrics  # noqa: E402
from .training import bce_loss, build_model, evaluate, train  # noqa: E402
from .experiments import (mask_vitals, missing_sweep,  # noqa: E402
                          ablation_suite, attention_report)
from .synthetic import SyntheticSpec, generate_synthetic  # noqa: E402
