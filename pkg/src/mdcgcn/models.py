"""Densely connected GCN blocks and the classification/segmentation networks."""

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import functional as F
from .nn.layers import GCNLayer, Linear

CLASSIFICATION = "classification"
SEGMENTATION = "segmentation"
TASKS = (CLASSIFICATION, SEGMENTATION)


@dataclass
class ModelConfig:
    in_dim: int = 57
    tau: int = 1024
    num_classes: int = 2
    dropout: float = 0.3
    task: str = CLASSIFICATION
    seed: int = 0
    block_layers: int = 5
    activation: str = "relu"
    dtype: str = "float64"

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        for name in ("in_dim", "tau", "num_classes"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.block_layers < 2:
            raise ConfigError(f"a DC block needs at least 2 layers, got {self.block_layers}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.activation not in F.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class DcBlockConfig:
    layers: int = 5
    tau: int = 1024

    def __post_init__(self):
        if self.layers < 2:
            raise ConfigError(f"a DC block needs at least 2 layers, got {self.layers}")
        if self.tau < 1:
            raise ConfigError(f"tau must be positive, got {self.tau}")

    def input_widths(self):
        """Input width of each in-block layer: ``l * tau`` for ``l = 1..layers``."""
        return [l * self.tau for l in range(1, self.layers + 1)]

    @property
    def out_width(self):
        return (self.layers + 1) * self.tau


class DcBlock:
    """Each layer sees the block input concatenated with every earlier layer output."""

    def __init__(self, config, rng, activation="relu", dtype=np.float64, name="block"):
        self.config = config
        self.layers = [
            GCNLayer(w, config.tau, rng, activation=activation, dtype=dtype, name=f"{name}.{i}")
            for i, w in enumerate(config.input_widths())
        ]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, x, op, training=False, dropout=0.0, rng=None):
        return dc_block_forward(x, op, self.layers, training, dropout, rng)


def dc_block_forward(x, op, layers, training=False, dropout=0.0, rng=None):
    tau = layers[0].in_dim
    if x.shape[1] != tau:
        raise ShapeError(f"DC block expects input width {tau}, got {x.shape[1]}")
    outputs = [x]
    for layer in layers:
        inp = outputs[0] if len(outputs) == 1 else F.concat(outputs)
        h = layer(inp, op)
        if training and dropout > 0.0:
            h = F.dropout(h, dropout, training, rng)
        outputs.append(h)
    return F.concat(outputs)


class _Network:
    def __init__(self, config):
        self.config = config.validate()
        self.dtype = np.dtype(config.dtype)
        self.init_rng = np.random.default_rng(config.seed)
        self.dropout_rng = np.random.default_rng([config.seed, 1])

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def num_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, arrays):
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise ConfigError(f"checkpoint lacks parameters: {sorted(missing)}")
        for name, p in params.items():
            a = np.asarray(arrays[name])
            if a.shape != p.shape:
                raise ShapeError(f"parameter {name}: checkpoint shape {a.shape} != model shape {p.shape}")
            p.data = a.astype(self.dtype, copy=True)

    def __call__(self, batch, training=False):
        return self.forward(batch, training)

    def _check_input(self, batch):
        feats = batch.features
        if feats.shape[1] != self.config.in_dim:
            raise ShapeError(f"model expects {self.config.in_dim}-wide node features, got {feats.shape[1]}")
        return feats.astype(self.dtype, copy=False)


class MdcGcnClassifier(_Network):
    """GCN(in -> tau) -> DC block (-> 6 tau) -> graph mean -> linear(6 tau -> C)."""

    def __init__(self, config):
        super().__init__(config)
        c, rng, dt = self.config, self.init_rng, self.dtype
        block = DcBlockConfig(c.block_layers, c.tau)
        self.input_layer = GCNLayer(c.in_dim, c.tau, rng, c.activation, dtype=dt, name="input")
        self.block = DcBlock(block, rng, c.activation, dt, name="block")
        self.head = Linear(block.out_width, c.num_classes, rng, dtype=dt, name="head")

    def parameters(self):
        return self.input_layer.parameters() + self.block.parameters() + self.head.parameters()

    def forward(self, batch, training=False):
        x = self._check_input(batch)
        h = self.input_layer(x, batch.op)
        h = self.block(h, batch.op, training, self.config.dropout, self.dropout_rng)
        pooled = F.mean_nodes(h, batch.offsets)
        return self.head(pooled)


class MdcGcnSegmenter(_Network):
    """GCN -> DC block -> GCN -> DC block -> GCN(6 tau -> C, no activation)."""

    def __init__(self, config):
        super().__init__(config)
        c, rng, dt = self.config, self.init_rng, self.dtype
        block = DcBlockConfig(c.block_layers, c.tau)
        self.input_layer = GCNLayer(c.in_dim, c.tau, rng, c.activation, dtype=dt, name="input")
        self.block1 = DcBlock(block, rng, c.activation, dt, name="block1")
        self.middle = GCNLayer(block.out_width, c.tau, rng, c.activation, dtype=dt, name="middle")
        self.block2 = DcBlock(block, rng, c.activation, dt, name="block2")
        self.output_layer = GCNLayer(block.out_width, c.num_classes, rng, None, dtype=dt, name="output")

    def parameters(self):
        return (
            self.input_layer.parameters()
            + self.block1.parameters()
            + self.middle.parameters()
            + self.block2.parameters()
            + self.output_layer.parameters()
        )

    def forward(self, batch, training=False):
        x = self._check_input(batch)
        p, rng = self.config.dropout, self.dropout_rng
        h = self.input_layer(x, batch.op)
        h = self.block1(h, batch.op, training, p, rng)
        h = self.middle(h, batch.op)
        h = self.block2(h, batch.op, training, p, rng)
        return self.output_layer(h, batch.op)


def build_model(config):
    config.validate()
    if config.task == CLASSIFICATION:
        return MdcGcnClassifier(config)
    return MdcGcnSegmenter(config)


def layer_widths(config):
    """Layer table as ``(kind, in, out)`` rows; the readout row is ``("mean", None, None)``."""
    config.validate()
    block = DcBlockConfig(config.block_layers, config.tau)
    rows = [("gcn", config.in_dim, config.tau)]
    rows += [("gcn", w, config.tau) for w in block.input_widths()]
    if config.task == CLASSIFICATION:
        rows.append(("mean", None, None))
        rows.append(("linear", block.out_width, config.num_classes))
    else:
        rows.append(("gcn", block.out_width, config.tau))
        rows += [("gcn", w, config.tau) for w in block.input_widths()]
        rows.append(("gcn", block.out_width, config.num_classes))
    return rows


def count_parameters(config):
    """Exact trainable scalar count: sum of ``in * out + out`` over weighted layers."""
    return sum(i * o + o for kind, i, o in layer_widths(config) if kind != "mean")


def format_layer_table(config):
    lines = []
    for n, (kind, i, o) in enumerate(layer_widths(config), start=1):
        desc = "(graph mean nodes)" if kind == "mean" else f"(in={i}, out={o})"
        lines.append(f"{n:>3}  {kind:<6} {desc}")
    return "\n".join(lines)
