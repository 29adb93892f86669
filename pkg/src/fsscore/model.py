"""The scoring network: GATv2/LineEvo graph stacks or a fingerprint MLP.

Higher score means easier to synthesise.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .fingerprint import Fingerprint, morgan_fingerprint
from .molgraph import EDGE_DIM, NODE_DIM, GraphBundle, build_bundle
from .smiles import Molecule, parse_smiles

ARCHITECTURES = ("GGLGGL", "GGG", "FP-MLP")
ATTENTION_KINDS = ("concat", "gatv2")
MODES = ("train", "eval", "mc_dropout")
CHECKPOINT_VERSION = 1
WEIGHTS_MAGIC = b"FSSW"


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "GGLGGL"
    hidden_dim: int = 128
    heads: int = 8
    head_hidden: int = 256
    head_layers: int = 3
    fp_embed_dim: int = 256
    dropout_rate: float = 0.2
    node_dim: int = NODE_DIM
    edge_dim: int = EDGE_DIM
    fp_bits: int = 2048
    fp_radius: int = 4
    fp_variant: str = "counts"
    # "concat" is the attention score as printed: a^T LeakyReLU(W_i h_i || W_j h_j);
    # "gatv2" scores a^T LeakyReLU(W_i h_i + W_j h_j)
    attention: str = "concat"
    seed: int = 0

    def validate(self) -> "ModelConfig":
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"unknown attention kind {self.attention!r}")
        for name in ("hidden_dim", "heads", "head_hidden", "head_layers", "fp_embed_dim", "node_dim", "fp_bits"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.hidden_dim % self.heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} is not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        return self

    @property
    def is_graph(self) -> bool:
        return self.architecture != "FP-MLP"

    @property
    def max_level(self) -> int:
        return 2 if self.architecture == "GGLGGL" else 0

    @property
    def layer_plan(self) -> tuple[tuple[str, int], ...]:
        """(kind, level) for every message-passing layer, in order."""
        if self.architecture == "GGLGGL":
            return (("G", 0), ("G", 0), ("L", 1), ("G", 1), ("G", 1), ("L", 2))
        if self.architecture == "GGG":
            return (("G", 0), ("G", 0), ("G", 0))
        return ()


def parameter_spec(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) of every parameter tensor for ``cfg``."""
    cfg.validate()
    D = cfg.hidden_dim
    spec: list[tuple[str, tuple[int, ...]]] = []
    in_dim = cfg.node_dim
    for n, (kind, _) in enumerate(cfg.layer_plan):
        p = f"layer{n}.{kind}"
        if kind == "G":
            spec += [(f"{p}.W_i", (in_dim, D)), (f"{p}.W_j", (in_dim, D)), (f"{p}.W", (in_dim, D))]
            if cfg.attention == "concat":
                spec += [(f"{p}.a_i", (D,)), (f"{p}.a_j", (D,))]
            else:
                spec += [(f"{p}.a", (D,))]
            spec += [(f"{p}.bias", (D,)), (f"{p}.prelu", (1,))]
        else:
            spec += [(f"{p}.W_lift", (D, D)), (f"{p}.U_lift", (cfg.node_dim, D)), (f"{p}.b_lift", (D,)),
                     (f"{p}.W_i", (D, D)), (f"{p}.W_j", (D, D)), (f"{p}.W", (D, D))]
            if cfg.attention == "concat":
                spec += [(f"{p}.a_i", (D,)), (f"{p}.a_j", (D,))]
            else:
                spec += [(f"{p}.a", (D,))]
            spec += [(f"{p}.bias", (D,))]
        in_dim = D
    for n in range(len(cfg.layer_plan)):
        spec += [(f"readout{n}.gate_w", (D, 1)), (f"readout{n}.gate_b", (1,))]
    if cfg.is_graph:
        head_in = 2 * D
    else:
        spec += [("fp_embed.W", (cfg.fp_bits, cfg.fp_embed_dim)), ("fp_embed.b", (cfg.fp_embed_dim,))]
        head_in = cfg.fp_embed_dim
    for n in range(cfg.head_layers):
        spec += [(f"mlp{n}.W", (head_in, cfg.head_hidden)), (f"mlp{n}.b", (cfg.head_hidden,))]
        head_in = cfg.head_hidden
    spec += [("out.W", (head_in, 1)), ("out.b", (1,))]
    return spec


class ScoreModel:
    """Parameters plus config; forward passes live in module functions."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor], provenance: dict | None = None):
        self.config = config
        self.params = params
        self.provenance = dict(provenance or {})

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype) -> "ScoreModel":
        params = {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in self.params.items()}
        return ScoreModel(self.config, params, self.provenance)

    def copy(self) -> "ScoreModel":
        params = {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        return ScoreModel(self.config, params, self.provenance)

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))


def init_model(config: ModelConfig) -> ScoreModel:
    """Glorot-uniform weights, zero biases, PReLU slopes at 0.25, seeded by ``config.seed``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    params: dict[str, Tensor] = {}
    for name, shape in parameter_spec(config):
        leaf = name.rsplit(".", 1)[1]
        if leaf == "prelu":
            data = np.full(shape, 0.25)
        elif leaf.startswith("b") or leaf in ("bias", "gate_b"):
            data = np.zeros(shape)
        elif len(shape) == 1:
            # attention vectors: fan_in = per-head width, fan_out = 1
            heads = config.heads if name.split(".")[1] == "G" else 1
            d = shape[0] // heads
            lim = np.sqrt(6.0 / (d + 1))
            data = rng.uniform(-lim, lim, size=shape)
        else:
            lim = np.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-lim, lim, size=shape)
        params[name] = Tensor(data.astype(ad.DEFAULT_DTYPE), requires_grad=True, name=name)
    return ScoreModel(config, params)


# ---------------------------------------------------------------------------
# inputs


@lru_cache(maxsize=65536)
def _bundle_for(smiles: str, max_level: int) -> GraphBundle:
    return build_bundle(parse_smiles(smiles), max_level)


@lru_cache(maxsize=65536)
def _fp_for(smiles: str, radius: int, n_bits: int, variant: str) -> Fingerprint:
    return morgan_fingerprint(parse_smiles(smiles), radius, n_bits, variant)


def prepare_input(cfg: ModelConfig, item):
    """SMILES text, Molecule, GraphBundle or Fingerprint -> model input."""
    if cfg.is_graph:
        if isinstance(item, GraphBundle):
            bundle = item
        elif isinstance(item, Molecule):
            bundle = build_bundle(item, cfg.max_level)
        elif isinstance(item, str):
            bundle = _bundle_for(item, cfg.max_level)
        else:
            raise TypeError(f"cannot feed {type(item).__name__} to a graph model")
        if bundle.max_level < cfg.max_level:
            raise ValueError(f"bundle has {bundle.max_level} line-graph levels, need {cfg.max_level}")
        if bundle[0].node_features.shape[1] != cfg.node_dim:
            raise ValueError(f"node feature width {bundle[0].node_features.shape[1]} != {cfg.node_dim}")
        return bundle
    if isinstance(item, Fingerprint):
        fp = item
    elif isinstance(item, Molecule):
        fp = morgan_fingerprint(item, cfg.fp_radius, cfg.fp_bits, cfg.fp_variant)
    elif isinstance(item, str):
        fp = _fp_for(item, cfg.fp_radius, cfg.fp_bits, cfg.fp_variant)
    else:
        raise TypeError(f"cannot feed {type(item).__name__} to a fingerprint model")
    if fp.n_bits != cfg.fp_bits:
        raise ValueError(f"fingerprint width {fp.n_bits} != {cfg.fp_bits}")
    return fp


@dataclass
class LevelBatch:
    x: np.ndarray
    edges: np.ndarray
    graph_ids: np.ndarray
    src: np.ndarray  # attention message source (both edge directions + self loops)
    tgt: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.x.shape[0]


def collate(bundles: Sequence[GraphBundle], n_levels: int, dtype) -> list[LevelBatch]:
    out = []
    for k in range(n_levels):
        xs, es, gids = [], [], []
        offset = 0
        for g_idx, b in enumerate(bundles):
            g = b[k]
            xs.append(g.node_features)
            es.append(g.edges + offset)
            gids.append(np.full(g.n_nodes, g_idx, dtype=np.int64))
            offset += g.n_nodes
        x = np.concatenate(xs).astype(dtype) if xs else np.zeros((0, NODE_DIM), dtype=dtype)
        edges = np.concatenate(es).reshape(-1, 2) if es else np.zeros((0, 2), dtype=np.int64)
        loops = np.arange(offset, dtype=np.int64)
        src = np.concatenate([edges[:, 0], edges[:, 1], loops])
        tgt = np.concatenate([edges[:, 1], edges[:, 0], loops])
        out.append(LevelBatch(x, edges, np.concatenate(gids) if gids else np.zeros(0, np.int64), src, tgt))
    return out


# ---------------------------------------------------------------------------
# layers


def _attention(p: dict[str, Tensor], prefix: str, h: Tensor, lb: LevelBatch, heads: int, attention: str) -> Tensor:
    """Attention-weighted neighbour aggregation (before bias and nonlinearity)."""
    q = h @ p[f"{prefix}.W_i"]
    k = h @ p[f"{prefix}.W_j"]
    val = h @ p[f"{prefix}.W"]
    if attention == "concat":
        s_i = ad.head_dot(ad.leaky_relu(q, 0.2), p[f"{prefix}.a_i"], heads)
        s_j = ad.head_dot(ad.leaky_relu(k, 0.2), p[f"{prefix}.a_j"], heads)
        e = ad.gather_rows(s_i, lb.tgt) + ad.gather_rows(s_j, lb.src)
    else:
        z = ad.leaky_relu(ad.gather_rows(q, lb.tgt) + ad.gather_rows(k, lb.src), 0.2)
        e = ad.head_dot(z, p[f"{prefix}.a"], heads)
    alpha = ad.segment_softmax(e, lb.tgt, lb.n_nodes)
    msg = ad.head_scale(ad.gather_rows(val, lb.src), alpha)
    return ad.segment_sum(msg, lb.tgt, lb.n_nodes)


def gatv2_forward(model: ScoreModel, layer: int, lb: LevelBatch, h: Tensor) -> Tensor:
    if h.shape[0] != lb.n_nodes:
        raise ValueError(f"node matrix has {h.shape[0]} rows, graph has {lb.n_nodes} nodes")
    cfg = model.config
    prefix = f"layer{layer}.G"
    agg = _attention(model.params, prefix, h, lb, cfg.heads, cfg.attention)
    return ad.prelu(ad.add_bias(agg, model.params[f"{prefix}.bias"]), model.params[f"{prefix}.prelu"])


def lineevo_forward(model: ScoreModel, layer: int, lower: LevelBatch, upper: LevelBatch, h: Tensor) -> Tensor:
    """Lift node states of ``lower`` onto its line graph ``upper`` and attend there."""
    if h.shape[0] != lower.n_nodes:
        raise ValueError(f"node matrix has {h.shape[0]} rows, lower level has {lower.n_nodes} nodes")
    if upper.n_nodes != lower.edges.shape[0]:
        raise ValueError("upper level is not the line graph of the lower level")
    p = model.params
    prefix = f"layer{layer}.L"
    ends = ad.gather_rows(h, lower.edges[:, 0]) + ad.gather_rows(h, lower.edges[:, 1])
    static = Tensor(upper.x)
    lifted = ad.add_bias(ends @ p[f"{prefix}.W_lift"] + static @ p[f"{prefix}.U_lift"], p[f"{prefix}.b_lift"])
    agg = _attention(p, prefix, lifted, upper, 1, model.config.attention)
    return ad.elu(ad.add_bias(agg, p[f"{prefix}.bias"]))


def readout(model: ScoreModel, layer: int, h: Tensor, graph_ids: np.ndarray, n_graphs: int) -> Tensor:
    """concat(max pool, sigmoid-gated sum pool) per graph; empty graphs give zeros."""
    p = model.params
    gate = ad.sigmoid(ad.add_bias(h @ p[f"readout{layer}.gate_w"], p[f"readout{layer}.gate_b"]))
    pooled_sum = ad.segment_sum(ad.head_scale(h, gate), graph_ids, n_graphs)
    pooled_max = ad.segment_max(h, graph_ids, n_graphs)
    return ad.concat([pooled_max, pooled_sum], axis=1)


def embed(model: ScoreModel, inputs: Sequence) -> Tensor:
    """Molecule-level representation before the MLP head, shape (batch, width)."""
    cfg = model.config
    dtype = model.dtype
    if not cfg.is_graph:
        x = Tensor(np.stack([fp.to_dense(dtype) for fp in inputs]) if inputs
                   else np.zeros((0, cfg.fp_bits), dtype=dtype))
        return ad.relu(ad.add_bias(x @ model.params["fp_embed.W"], model.params["fp_embed.b"]))
    levels = collate(inputs, cfg.max_level + 1, dtype)
    n = len(inputs)
    h = Tensor(levels[0].x)
    level = 0
    total = None
    for i, (kind, lvl) in enumerate(cfg.layer_plan):
        if kind == "G":
            h = gatv2_forward(model, i, levels[level], h)
        else:
            h = lineevo_forward(model, i, levels[level], levels[lvl], h)
            level = lvl
        r = readout(model, i, h, levels[level].graph_ids, n)
        total = r if total is None else total + r
    return total


def head(model: ScoreModel, x: Tensor, rate: float, rng: ad.DropoutRNG | None) -> Tensor:
    """MLP head; dropout on its input and after every hidden layer."""
    p = model.params
    x = ad.dropout(x, rate, rng)
    for n in range(model.config.head_layers):
        x = ad.relu(ad.add_bias(x @ p[f"mlp{n}.W"], p[f"mlp{n}.b"]))
        x = ad.dropout(x, rate, rng)
    return ad.add_bias(x @ p["out.W"], p["out.b"])


def score_batch(model: ScoreModel, items: Sequence, mode: str = "eval", rng: ad.DropoutRNG | None = None,
                rate: float | None = None) -> Tensor:
    """Scores for a batch as a (batch, 1) tensor."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    inputs = [prepare_input(model.config, it) for it in items]
    emb = embed(model, inputs)
    if mode == "eval":
        return head(model, emb, 0.0, None)
    if rng is None:
        raise ValueError(f"mode {mode!r} needs a DropoutRNG")
    return head(model, emb, model.config.dropout_rate if rate is None else rate, rng)


def forward_score(model: ScoreModel, item, mode: str = "eval", rng: ad.DropoutRNG | None = None) -> float:
    with ad.no_tape():
        return float(score_batch(model, [item], mode, rng).data[0, 0])


def predict(model: ScoreModel, items: Sequence, batch_size: int = 256) -> np.ndarray:
    """Eval-mode scores as a float64 vector."""
    out = []
    with ad.no_tape():
        for start in range(0, len(items), batch_size):
            out.append(score_batch(model, items[start:start + batch_size]).data[:, 0].astype(np.float64))
    return np.concatenate(out) if out else np.zeros(0)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: ScoreModel, path: str | Path, provenance: dict | None = None) -> Path:
    """Write ``meta.json`` and ``weights.bin`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    spec = parameter_spec(model.config)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "architecture": model.config.architecture,
        "config": asdict(model.config),
        "tensors": [{"name": n, "shape": list(s)} for n, s in spec],
        "provenance": {**model.provenance, **(provenance or {})},
    }
    chunks = [WEIGHTS_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(spec))]
    for name, shape in spec:
        arr = np.ascontiguousarray(model.params[name].data, dtype="<f4")
        chunks.append(struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}I", *shape))
        chunks.append(arr.tobytes())
    tmp = path / "weights.bin.tmp"
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path / "weights.bin")
    (path / "meta.json").write_text(json.dumps(meta, indent=2))
    return path


def load_checkpoint(path: str | Path, expect_architecture: str | None = None) -> ScoreModel:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
        blob = (path / "weights.bin").read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"incomplete checkpoint at {path}: {exc.filename} missing") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable meta.json in {path}: {exc}") from exc
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint format {meta.get('format_version')} != {CHECKPOINT_VERSION}")
    try:
        cfg = ModelConfig(**meta["config"]).validate()
    except (TypeError, ConfigError) as exc:
        raise CheckpointError(f"invalid model config in checkpoint: {exc}") from exc
    if expect_architecture is not None and cfg.architecture != expect_architecture:
        raise CheckpointError(
            f"config mismatch: checkpoint holds {cfg.architecture}, expected {expect_architecture}"
        )
    spec = parameter_spec(cfg)
    if blob[:4] != WEIGHTS_MAGIC:
        raise CheckpointError("bad magic bytes in weights.bin")
    if len(blob) < 12:
        raise CheckpointError("truncated weights.bin")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"weights format {version} != {CHECKPOINT_VERSION}")
    if count != len(spec):
        raise CheckpointError(f"weights hold {count} tensors, config needs {len(spec)}")
    offset = 12
    params: dict[str, Tensor] = {}
    try:
        for name, shape in spec:
            (ndim,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            dims = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            if tuple(dims) != tuple(shape):
                raise CheckpointError(f"tensor {name}: stored shape {dims} != expected {shape}")
            size = int(np.prod(shape)) * 4
            if offset + size > len(blob):
                raise CheckpointError("truncated weights.bin")
            data = np.frombuffer(blob, dtype="<f4", count=size // 4, offset=offset).reshape(shape)
            offset += size
            params[name] = Tensor(data.astype(np.float32), requires_grad=True, name=name)
    except struct.error as exc:
        raise CheckpointError("truncated weights.bin") from exc
    if offset != len(blob):
        raise CheckpointError("trailing bytes in weights.bin")
    return ScoreModel(cfg, params, meta.get("provenance", {}))


def small_config(**overrides) -> ModelConfig:
    """A reduced GGLGGL config for tests and toy runs."""
    base = dict(hidden_dim=32, heads=4, head_hidden=64)
    base.update(overrides)
    return replace(ModelConfig(), **base).validate()
