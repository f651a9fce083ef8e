"""Model assembly: the attention-augmented Tucker predictor and its baseline.

Both models share the same front end — three mode embeddings combined into a
rank-one interaction tensor and flattened row-major — and both squash their
output through a sigmoid so training targets live in (0, 1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import ops
from .autodiff import Node, Parameter, Tape
from .errors import ConfigError, ValidationError
from .preprocess import NormalizationParams
from .sparse import TensorShape

LN_EPS = 1e-5

MODEL_KINDS = ("msntucf", "neutucf")


def _divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


@dataclass
class ModelConfig:
    """Architecture hyperparameters; d_model and d_k are derived."""

    P: int = 5
    Q: int = 5
    R: int = 5
    heads: int = 25
    loops: int = 4
    dropout: float = 0.1
    seed: int = 0
    score_axis: str = "row"          # softmax over rows of q∘k, or "col"
    dropout_position: str = "post"   # dropout on scores post- or pre-softmax
    share_blocks: bool = False       # one set of block weights reused N times
    chunked: bool = False            # heads project from their own chunk of t

    def __post_init__(self):
        self.validate()

    @property
    def d_model(self) -> int:
        return self.P * self.Q * self.R

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    def validate(self):
        for name in ("P", "Q", "R"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.heads < 1:
            raise ConfigError("head count must be >= 1")
        if self.loops < 1:
            raise ConfigError("loop count must be >= 1")
        if self.d_model % self.heads != 0:
            raise ConfigError(
                f"head count {self.heads} must divide d_model {self.d_model} "
                f"(valid divisors: {_divisors(self.d_model)})"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.score_axis not in ("row", "col"):
            raise ConfigError(f"score_axis must be 'row' or 'col', got {self.score_axis!r}")
        if self.dropout_position not in ("post", "pre"):
            raise ConfigError(
                f"dropout_position must be 'post' or 'pre', got {self.dropout_position!r}"
            )


@dataclass
class BlockParams:
    """One self-attention block: per-head projections, fusion, layer norm."""

    wq: list
    wk: list
    wv: list
    wo: Parameter
    wo_bias: Parameter
    ln_gain: Parameter
    ln_bias: Parameter

    def parameters(self):
        return [*self.wq, *self.wk, *self.wv, self.wo, self.wo_bias,
                self.ln_gain, self.ln_bias]


@dataclass
class MsntucfParams:
    A: Parameter
    B: Parameter
    C: Parameter
    blocks: list
    w_out: Parameter

    def parameters(self):
        out = [self.A, self.B, self.C]
        seen = set()
        for block in self.blocks:  # shared blocks appear once
            if id(block) in seen:
                continue
            seen.add(id(block))
            out.extend(block.parameters())
        out.append(self.w_out)
        return out


@dataclass
class NeutucfParams:
    A: Parameter
    B: Parameter
    C: Parameter
    core: Parameter

    def parameters(self):
        return [self.A, self.B, self.C, self.core]


def glorot(rng, shape, name: str) -> Parameter:
    fan_out = shape[0]
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-s, s, size=shape), name=name)


def init_params(kind: str, config: ModelConfig, shape: TensorShape, seed=None):
    """Fresh parameters; scaled-uniform weights, identity layer norms."""
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    I, J, K = shape.astuple()
    A = glorot(rng, (I, config.P), "A")
    B = glorot(rng, (J, config.Q), "B")
    C = glorot(rng, (K, config.R), "C")
    if kind == "neutucf":
        return NeutucfParams(A, B, C, glorot(rng, (config.P, config.Q, config.R), "core"))
    d_model, d_k = config.d_model, config.d_k
    proj_cols = d_k if config.chunked else d_model
    n_distinct = 1 if config.share_blocks else config.loops
    distinct = []
    for n in range(n_distinct):
        block = BlockParams(
            wq=[glorot(rng, (d_k, proj_cols), f"block{n}.head{l}.wq") for l in range(config.heads)],
            wk=[glorot(rng, (d_k, proj_cols), f"block{n}.head{l}.wk") for l in range(config.heads)],
            wv=[glorot(rng, (d_k, proj_cols), f"block{n}.head{l}.wv") for l in range(config.heads)],
            wo=glorot(rng, (d_model, d_model), f"block{n}.wo"),
            wo_bias=Parameter(np.zeros(d_model), name=f"block{n}.wo_bias"),
            ln_gain=Parameter(np.ones(d_model), name=f"block{n}.ln_gain"),
            ln_bias=Parameter(np.zeros(d_model), name=f"block{n}.ln_bias"),
        )
        distinct.append(block)
    blocks = [distinct[0]] * config.loops if config.share_blocks else distinct
    w_out = glorot(rng, (1, d_model), "w_out")
    return MsntucfParams(A, B, C, blocks, w_out)


def interaction_vector(tape, params, i: int, j: int, k: int) -> Node:
    """Flattened rank-one interaction of the three mode embeddings."""
    a = ops.embedding_lookup(tape, params.A, i)
    b = ops.embedding_lookup(tape, params.B, j)
    c = ops.embedding_lookup(tape, params.C, k)
    return ops.flatten(tape, ops.outer3(tape, a, b, c))


def attention_block(tape, e_prev: Node, block: BlockParams, config: ModelConfig,
                    training: bool = False, rng=None) -> Node:
    """One multi-head self-attention block with residual and layer norm."""
    d_k = config.d_k
    inv_sqrt = 1.0 / math.sqrt(d_k)
    head_outputs = []
    for l in range(config.heads):
        if config.chunked:
            src = ops.slice_segment(tape, e_prev, l * d_k, (l + 1) * d_k)
        else:
            src = e_prev
        q = ops.linear_nobias(tape, block.wq[l], src)
        key = ops.linear_nobias(tape, block.wk[l], src)
        v = ops.linear_nobias(tape, block.wv[l], src)
        if config.score_axis == "row":
            scores = ops.outer2(tape, q, key)
            transpose = False
        else:
            # column-normalized variant: softmax over the first index of q∘k,
            # realized as row softmax of the transposed product
            scores = ops.outer2(tape, key, q)
            transpose = True
        scores = ops.scale(tape, scores, inv_sqrt)
        if config.dropout_position == "pre":
            scores = ops.dropout(tape, scores, config.dropout, training, rng)
        scores = ops.softmax_rows(tape, scores)
        if config.dropout_position == "post":
            scores = ops.dropout(tape, scores, config.dropout, training, rng)
        head_outputs.append(ops.matvec(tape, scores, v, transpose=transpose))
    fused = ops.linear_nobias(tape, block.wo, ops.concat(tape, head_outputs))
    fused = ops.add_bias(tape, fused, block.wo_bias)
    return ops.layer_norm(tape, ops.add(tape, e_prev, fused),
                          block.ln_gain, block.ln_bias, LN_EPS)


def msntucf_forward(tape, params: MsntucfParams, config: ModelConfig,
                    i: int, j: int, k: int, training: bool = False, rng=None) -> Node:
    """Predicted value in (0, 1) for one (i, j, k) cell."""
    e = interaction_vector(tape, params, i, j, k)
    for block in params.blocks:
        e = attention_block(tape, e, block, config, training, rng)
    return ops.sigmoid(tape, ops.linear_nobias(tape, params.w_out, e))


def neutucf_forward(tape, params: NeutucfParams, i: int, j: int, k: int) -> Node:
    """Baseline: sigmoid of the core-weighted sum over the interaction tensor."""
    a = ops.embedding_lookup(tape, params.A, i)
    b = ops.embedding_lookup(tape, params.B, j)
    c = ops.embedding_lookup(tape, params.C, k)
    t = ops.outer3(tape, a, b, c)
    pre = ops.dot(tape, ops.param_leaf(tape, params.core), t)
    return ops.sigmoid(tape, pre)


def forward(tape, kind: str, params, config: ModelConfig, i: int, j: int, k: int,
            training: bool = False, rng=None) -> Node:
    if kind == "msntucf":
        return msntucf_forward(tape, params, config, i, j, k, training, rng)
    if kind == "neutucf":
        return neutucf_forward(tape, params, i, j, k)
    raise ConfigError(f"unknown model kind {kind!r}")


def predict(kind: str, params, config: ModelConfig, i: int, j: int, k: int) -> float:
    """Tape-free, dropout-free forward pass."""
    return float(forward(None, kind, params, config, i, j, k).value.reshape(()))


@dataclass(frozen=True)
class HeadSpan:
    """Which positions of the flattened interaction vector a head covers."""

    head: int
    start: int
    stop: int
    kind: str                 # full | slice | fiber | element | chunk
    coords: tuple = ()


def head_partition_map(config: ModelConfig) -> list:
    """Semantic correspondence between heads and slices/fibers of the tensor.

    With row-major flattening, consecutive length-d_k chunks of t line up
    with mode-1 slices when d_k == Q*R and with mode-(1,2) fibers when
    d_k == R.  Heads still project from the full vector unless the chunked
    mode is enabled; this map documents (and tests) the correspondence.
    """
    if config.d_model % config.heads != 0:
        raise ConfigError(
            f"head count {config.heads} must divide d_model {config.d_model} "
            f"(valid divisors: {_divisors(config.d_model)})"
        )
    d_k = config.d_k
    Q, R = config.Q, config.R
    spans = []
    for l in range(config.heads):
        if config.heads == 1:
            kind, coords = "full", ()
        elif d_k == Q * R:
            kind, coords = "slice", (l,)
        elif d_k == R:
            kind, coords = "fiber", (l // Q, l % Q)
        elif d_k == 1:
            kind, coords = "element", (l // (Q * R), (l // R) % Q, l % R)
        else:
            kind, coords = "chunk", ()
        spans.append(HeadSpan(l, l * d_k, (l + 1) * d_k, kind, coords))
    return spans


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_VERSION = 1


def _named_arrays(kind: str, params) -> dict:
    arrays = {"A": params.A.value, "B": params.B.value, "C": params.C.value}
    if kind == "neutucf":
        arrays["core"] = params.core.value
        return arrays
    seen = {}
    for n, block in enumerate(params.blocks):
        if id(block) in seen:
            continue
        seen[id(block)] = n
        for l in range(len(block.wq)):
            arrays[f"block{n}.head{l}.wq"] = block.wq[l].value
            arrays[f"block{n}.head{l}.wk"] = block.wk[l].value
            arrays[f"block{n}.head{l}.wv"] = block.wv[l].value
        arrays[f"block{n}.wo"] = block.wo.value
        arrays[f"block{n}.wo_bias"] = block.wo_bias.value
        arrays[f"block{n}.ln_gain"] = block.ln_gain.value
        arrays[f"block{n}.ln_bias"] = block.ln_bias.value
    arrays["w_out"] = params.w_out.value
    return arrays


def save_checkpoint(path, kind: str, params, config: ModelConfig,
                    norm: NormalizationParams, shape: TensorShape) -> None:
    """Named float64 arrays plus a JSON meta record, in one .npz container."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": asdict(config),
        "norm": asdict(norm),
        "shape": shape.astuple(),
    }
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **_named_arrays(kind, params))


def load_checkpoint(path):
    """Returns (kind, params, config, norm, shape); predictions reproduce bit-exactly."""
    with np.load(path) as data:
        arrays = {name: data[name] for name in data.files}
    try:
        meta = json.loads(bytes(arrays.pop("meta")).decode())
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"checkpoint {path}: missing or corrupt meta record") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"checkpoint {path}: unsupported version {meta.get('version')}")
    kind = meta["kind"]
    config = ModelConfig(**meta["config"])
    norm = NormalizationParams(**meta["norm"])
    shape = TensorShape(*meta["shape"])
    params = init_params(kind, config, shape, seed=config.seed)
    for p in params.parameters():
        if p.name not in arrays:
            raise ValidationError(f"checkpoint {path}: missing array {p.name!r}")
        stored = arrays[p.name]
        if stored.shape != p.value.shape:
            raise ValidationError(
                f"checkpoint {path}: array {p.name!r} has shape {stored.shape}, "
                f"expected {p.value.shape}"
            )
        p.value[...] = stored
    return kind, params, config, norm, shape
