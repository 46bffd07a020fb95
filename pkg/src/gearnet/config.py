"""Run configuration: a YAML document with sections ``graph``, ``encoder``,
``pretrain``, ``train`` and ``paths``.

Every key is optional. Defaults are the published full-scale GearNet
settings (hidden 512, six layers and so on). Unknown sections or keys are
errors.
"""

import dataclasses
from dataclasses import dataclass, field

import yaml

from .encoder import EncoderConfig
from .errors import SchemaError
from .graph import GraphConfig
from .pretrain import METHODS, ContrastiveConfig, SelfPredConfig


@dataclass
class PretrainSection:
    method: str = "multiview_contrast"
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = None  # None: 128 for distance, 96 otherwise
    epochs: int = 50
    steps: int = None        # overrides epochs when set
    fixed_samples: bool = False
    temperature: float = 0.07
    projection_dim: int = 128
    crop_length: int = 50
    crop_radius: float = 15.0
    mask_rate: float = 0.15
    num_masked_residues: int = 512
    num_distance_pairs: int = 256
    num_angle_triplets: int = 512
    num_dihedral_quadruples: int = 512
    random_dihedral: bool = False


@dataclass
class TrainSection:
    optimizer: str = "adam"
    lr: float = 1e-4
    batch_size: int = 2
    epochs: int = 200
    seed: int = 0
    dropout: float = 0.1


@dataclass
class PathsSection:
    dataset: str = None
    checkpoint: str = None
    output: str = None


@dataclass
class EncoderSection:
    num_layers: int = 6
    hidden_dim: int = 512
    edge_hidden_dim: int = None
    use_edge_mp: bool = True
    input_projection: bool = True
    dropout: float = 0.0


@dataclass
class GraphSection:
    d_seq: int = 3
    d_radius: float = 10.0
    k: int = 10
    d_long: int = 5
    num_angle_bins: int = 8


SECTIONS = {
    "graph": GraphSection,
    "encoder": EncoderSection,
    "pretrain": PretrainSection,
    "train": TrainSection,
    "paths": PathsSection,
}

_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


@dataclass
class RunConfig:
    graph: GraphSection = field(default_factory=GraphSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    train: TrainSection = field(default_factory=TrainSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def graph_config(self):
        return GraphConfig(**dataclasses.asdict(self.graph))

    def encoder_config(self, dropout=None):
        kw = dataclasses.asdict(self.encoder)
        if dropout is not None:
            kw["dropout"] = dropout
        return EncoderConfig(**kw)

    def contrastive_config(self):
        p = self.pretrain
        return ContrastiveConfig(p.temperature, p.projection_dim, p.crop_length, p.crop_radius,
                                 p.mask_rate, self.pretrain_batch_size())

    def selfpred_config(self):
        p = self.pretrain
        return SelfPredConfig(p.num_masked_residues, p.num_distance_pairs, p.num_angle_triplets,
                              p.num_dihedral_quadruples, p.random_dihedral)

    def pretrain_batch_size(self):
        if self.pretrain.batch_size is not None:
            return self.pretrain.batch_size
        return 128 if self.pretrain.method == "distance" else 96

    def to_dict(self):
        return dataclasses.asdict(self)


def _coerce(value, annotation, where):
    kind = _TYPES[annotation] if isinstance(annotation, str) else annotation
    if value is None:
        return None
    if kind is bool:
        ok = isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise SchemaError(f"{where}: expected {kind.__name__}, got {value!r}")
    return value


def config_from_dict(doc):
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise SchemaError("config must be a mapping of sections")
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise SchemaError(f"unknown config section(s) {unknown}; valid: {sorted(SECTIONS)}")
    cfg = RunConfig()
    for name, body in doc.items():
        section_cls = SECTIONS[name]
        if body is None:
            continue
        if not isinstance(body, dict):
            raise SchemaError(f"section {name!r} must be a mapping")
        fields = {f.name: f for f in dataclasses.fields(section_cls)}
        bad = sorted(set(body) - set(fields))
        if bad:
            raise SchemaError(f"unknown key(s) {bad} in section {name!r}; valid: {sorted(fields)}")
        values = {k: _coerce(v, fields[k].type, f"{name}.{k}") for k, v in body.items()}
        setattr(cfg, name, section_cls(**{**dataclasses.asdict(section_cls()), **values}))
    if cfg.pretrain.method not in METHODS:
        raise SchemaError(f"unknown pretraining method {cfg.pretrain.method!r}; "
                          f"valid methods: {', '.join(METHODS)}")
    return cfg


def load_config(path=None):
    """Parse a YAML config file; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SchemaError(f"invalid YAML in {path}: {exc}") from None
    return config_from_dict(doc)


def describe_keys():
    """Every section and key with its default, for ``--help``."""
    lines = []
    for name, section_cls in SECTIONS.items():
        keys = ", ".join(f"{f.name}={getattr(section_cls(), f.name)!r}" for f in dataclasses.fields(section_cls))
        lines.append(f"  {name}: {keys}")
    return "\n".join(lines)
