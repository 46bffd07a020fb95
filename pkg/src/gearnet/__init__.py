"""GearNet and GearNet-Edge protein structure encoders with geometric
self-supervised pretraining, written on a small numpy autodiff core."""

from .encoder import EncoderConfig, GearNet
from .graph import GraphConfig, LineGraph, ResidueGraph, build_graph, build_line_graph
from .nn import Adam, Context, ParameterStore, SGD
from .pretrain import METHODS, ContrastiveConfig, PretrainModel, SelfPredConfig, pretrain
from .struct_io import ProteinStructure, load_checkpoint, parse_pdb, read_jsonl_dataset, save_checkpoint
from .tasks import PredictionTable, TaskHead, accuracy, aupr_pair, fmax, train_task

__version__ = "0.1.0"
