"""Attention encoder-decoder policy over TSP tours.

The encoder is a stack of multi-head self-attention and feed-forward blocks
with residual connections and per-node feature normalisation. The decoder
builds a tour one node at a time from a context of (graph mean, first node,
last node), takes one multi-head glimpse over unvisited nodes and scores
them with a single clipped compatibility head.

All functions work on batches ``coords (B, n, 2)``; the single-instance
wrappers (:func:`encode`, :func:`rollout`, :func:`log_prob_of_tour`) exist
for tests and tooling.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from nco import autograd as ag
from nco.autograd import Tensor
from nco.tsp import Instance, Tour, TourError, batch_tour_lengths, validate_tour

CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class PolicyHyper:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int | None = None
    clip_c: float = 10.0
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        if self.d_model <= 0 or self.n_heads <= 0 or self.n_layers < 0 or self.d_ff <= 0:
            raise ConfigError("policy dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not self.clip_c > 0:
            raise ConfigError("clip_c must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def param_layout(hyper: PolicyHyper) -> list[tuple[str, tuple[int, ...], int]]:
    """``(name, shape, fan_in)`` for every learnable tensor, in canonical order."""
    d, f = hyper.d_model, hyper.d_ff
    out = [("init.W", (2, d), 2), ("init.b", (d,), 2)]
    for l in range(hyper.n_layers):
        p = f"enc{l}."
        out += [
            (p + "Wq", (d, d), d),
            (p + "Wk", (d, d), d),
            (p + "Wv", (d, d), d),
            (p + "Wo", (d, d), d),
            (p + "norm1.g", (d,), d),
            (p + "norm1.b", (d,), d),
            (p + "ff1.W", (d, f), d),
            (p + "ff1.b", (f,), d),
            (p + "ff2.W", (f, d), f),
            (p + "ff2.b", (d,), f),
            (p + "norm2.g", (d,), d),
            (p + "norm2.b", (d,), d),
        ]
    out += [
        ("dec.v_first", (d,), d),
        ("dec.v_last", (d,), d),
        ("dec.W_ctx", (3 * d, d), 3 * d),
        ("dec.Wk_glimpse", (d, d), d),
        ("dec.Wv_glimpse", (d, d), d),
        ("dec.Wo_glimpse", (d, d), d),
        ("dec.Wk_logit", (d, d), d),
    ]
    return out


@dataclass
class PolicyParams:
    hyper: PolicyHyper
    tensors: dict[str, Tensor]
    seed: int | None = None

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def values(self) -> list[Tensor]:
        return list(self.tensors.values())

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            self.hyper,
            {k: Tensor(t.data.copy(), requires_grad=True) for k, t in self.tensors.items()},
            self.seed,
        )

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())


def init_params(hyper: PolicyHyper, seed: int) -> PolicyParams:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) with ``d`` each tensor's fan-in.

    Normalization gains start at 1 and offsets at 0. Per-node normalization
    does not remove the component shared by all nodes, so random gains would
    shrink the node-specific signal layer after layer.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape, fan_in in param_layout(hyper):
        bound = 1.0 / math.sqrt(fan_in)
        draw = rng.uniform(-bound, bound, size=shape)
        if ".norm" in name:
            draw = np.ones(shape) if name.endswith(".g") else np.zeros(shape)
        tensors[name] = Tensor(draw, requires_grad=True)
    return PolicyParams(hyper, tensors, seed)


# encoder ------------------------------------------------------------------------


def _check_finite(t: Tensor, where: str):
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite activations in {where}")


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return ag.swapaxes(x.reshape(b, n, heads, d // heads), 1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, k = x.shape
    return ag.swapaxes(x, 1, 2).reshape(b, n, h * k)


def _norm(params: PolicyParams, x: Tensor, prefix: str) -> Tensor:
    y = ag.normalize_features(x, params.hyper.norm_eps)
    return y * params[prefix + ".g"] + params[prefix + ".b"]


def encode_batch(params: PolicyParams, coords) -> Tensor:
    """Node embeddings ``(B, n, d_model)`` for coordinates ``(B, n, 2)``."""
    hyper = params.hyper
    h = ag.as_tensor(coords) @ params["init.W"] + params["init.b"]
    _check_finite(h, "input projection")
    scale = 1.0 / math.sqrt(hyper.d_head)
    for l in range(hyper.n_layers):
        p = f"enc{l}."
        q = _split_heads(h @ params[p + "Wq"], hyper.n_heads)
        k = _split_heads(h @ params[p + "Wk"], hyper.n_heads)
        v = _split_heads(h @ params[p + "Wv"], hyper.n_heads)
        attn = ag.softmax_lastdim((q @ ag.swapaxes(k, -1, -2)) * scale)
        mha = _merge_heads(attn @ v) @ params[p + "Wo"]
        h = _norm(params, h + mha, p + "norm1")
        ff = ag.relu(h @ params[p + "ff1.W"] + params[p + "ff1.b"]) @ params[p + "ff2.W"]
        h = _norm(params, h + (ff + params[p + "ff2.b"]), p + "norm2")
        _check_finite(h, f"encoder layer {l}")
    return h


def encode(params: PolicyParams, inst: Instance) -> Tensor:
    return encode_batch(params, inst.coords[None]).reshape(inst.n, params.hyper.d_model)


# decoder ------------------------------------------------------------------------


@dataclass
class DecoderCache:
    """Per-instance quantities reused at every decoding step."""

    embeddings: Tensor  # (B, n, d)
    graph: Tensor  # (B, d)
    k_glimpse: Tensor  # (B, H, n, dk)
    v_glimpse: Tensor  # (B, H, n, dk)
    k_logit: Tensor  # (B, d, n)

    @classmethod
    def build(cls, params: PolicyParams, emb: Tensor) -> "DecoderCache":
        heads = params.hyper.n_heads
        return cls(
            embeddings=emb,
            graph=emb.mean(axis=1),
            k_glimpse=_split_heads(emb @ params["dec.Wk_glimpse"], heads),
            v_glimpse=_split_heads(emb @ params["dec.Wv_glimpse"], heads),
            k_logit=ag.swapaxes(emb @ params["dec.Wk_logit"], 1, 2),
        )


@dataclass
class DecodingContext:
    """Visited mask plus first/last chosen node (``None`` before the first step)."""

    visited: np.ndarray
    first: int | None = None
    last: int | None = None


def _step_logits(params: PolicyParams, cache: DecoderCache, visited: np.ndarray,
                 first_emb: Tensor, last_emb: Tensor) -> Tensor:
    """Clipped compatibility scores ``(B, n)``, before masking."""
    hyper = params.hyper
    b, n, d = cache.embeddings.shape
    ctx = ag.concat([cache.graph, first_emb, last_emb], axis=-1) @ params["dec.W_ctx"]
    q = ag.swapaxes(ctx.reshape(b, 1, hyper.n_heads, hyper.d_head), 1, 2)  # (B, H, 1, dk)
    compat = (q @ ag.swapaxes(cache.k_glimpse, -1, -2)) * (1.0 / math.sqrt(hyper.d_head))
    attn = ag.softmax_lastdim(compat, visited[:, None, None, :])
    glimpse = _merge_heads(attn @ cache.v_glimpse) @ params["dec.Wo_glimpse"]  # (B, 1, d)
    raw = (glimpse @ cache.k_logit).reshape(b, n) * (1.0 / math.sqrt(d))
    return ag.tanh(raw) * hyper.clip_c


def _placeholder(params: PolicyParams, name: str, batch: int) -> Tensor:
    return Tensor(np.zeros((batch, 1))) + params[name]


def decode_step(params: PolicyParams, embeddings: Tensor, context: DecodingContext) -> Tensor:
    """Next-node distribution ``(n,)`` for a single instance."""
    visited = np.asarray(context.visited, dtype=bool).reshape(1, -1)
    if visited.all():
        raise ag.ContractError("decoding complete: every node has been visited")
    emb = ag.as_tensor(embeddings)
    if emb.ndim == 2:
        emb = emb.reshape(1, *emb.shape)
    cache = DecoderCache.build(params, emb)
    if context.first is None:
        first = _placeholder(params, "dec.v_first", 1)
        last = _placeholder(params, "dec.v_last", 1)
    else:
        first = ag.select(emb, [context.first])
        last = ag.select(emb, [context.last])
    scores = _step_logits(params, cache, visited, first, last)
    return ag.softmax_lastdim(scores, visited).reshape(visited.shape[1])


Chooser = Callable[[int, np.ndarray], np.ndarray]


def _decode(params: PolicyParams, coords, choose: Chooser) -> tuple[np.ndarray, Tensor]:
    """Run ``n`` decoding steps; ``choose(step, log_probs)`` picks actions.

    Returns tours ``(B, n)`` and the summed log-probability ``(B,)`` as a
    tensor (recorded when a tape is active).
    """
    coords = np.asarray(coords, dtype=np.float64)
    b, n, _ = coords.shape
    emb = encode_batch(params, coords)
    cache = DecoderCache.build(params, emb)
    visited = np.zeros((b, n), dtype=bool)
    tours = np.empty((b, n), dtype=np.intp)
    first = _placeholder(params, "dec.v_first", b)
    last = _placeholder(params, "dec.v_last", b)
    total = None
    rows = np.arange(b)
    for step in range(n):
        scores = _step_logits(params, cache, visited, first, last)
        logp = ag.log_softmax_lastdim(scores, visited)
        action = np.asarray(choose(step, logp.data), dtype=np.intp)
        if visited[rows, action].any():
            raise TourError(f"step {step}: chosen node already visited")
        picked = ag.select(logp, action)
        total = picked if total is None else total + picked
        tours[:, step] = action
        visited[rows, action] = True
        last = ag.select(emb, action)
        if step == 0:
            first = last
    return tours, total


def _greedy(step: int, logp: np.ndarray) -> np.ndarray:
    return np.argmax(logp, axis=1)  # first maximum == lowest index on ties


def _sampler(rng: np.random.Generator) -> Chooser:
    def choose(step: int, logp: np.ndarray) -> np.ndarray:
        probs = np.exp(logp)
        cum = np.cumsum(probs, axis=1)
        r = rng.random(len(probs))[:, None] * cum[:, -1:]
        return (cum <= r).sum(axis=1)

    return choose


@dataclass
class RolloutResult:
    tour: Tour
    log_prob: float
    length: float


@dataclass
class BatchRollout:
    tours: np.ndarray
    log_prob: Tensor
    lengths: np.ndarray = field(repr=False)


def rollout_batch(params: PolicyParams, coords, mode: str, seed=None) -> BatchRollout:
    """Greedy or sampled tours for a batch. ``seed`` may be an int or a Generator."""
    if mode == "greedy":
        choose = _greedy
    elif mode == "sample":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        choose = _sampler(rng)
    else:
        raise ValueError(f"mode must be 'greedy' or 'sample', got {mode!r}")
    coords = np.asarray(coords, dtype=np.float64)
    tours, logp = _decode(params, coords, choose)
    return BatchRollout(tours, logp, batch_tour_lengths(coords, tours))


def greedy_costs(params: PolicyParams, coords, chunk: int = 512) -> np.ndarray:
    """Greedy tour lengths without recording, in fixed-size chunks."""
    coords = np.asarray(coords, dtype=np.float64)
    out = []
    with ag.no_grad():
        for start in range(0, len(coords), chunk):
            out.append(rollout_batch(params, coords[start:start + chunk], "greedy").lengths)
    return np.concatenate(out)


def log_prob_of_tours(params: PolicyParams, coords, tours) -> Tensor:
    """Teacher-forced summed log-probabilities ``(B,)`` of the given tours."""
    tours = np.asarray(tours, dtype=np.intp)
    coords = np.asarray(coords, dtype=np.float64)
    if tours.shape != coords.shape[:2]:
        raise TourError(f"tours shape {tours.shape} does not match coords {coords.shape}")
    for t in tours:
        if not validate_tour(t, len(t), base=0):
            raise TourError(f"not a permutation: {t.tolist()}")
    _, logp = _decode(params, coords, lambda step, _: tours[:, step])
    return logp


def rollout(params: PolicyParams, inst: Instance, mode: str, seed=None) -> RolloutResult:
    with ag.no_grad():
        res = rollout_batch(params, inst.coords[None], mode, seed)
    return RolloutResult(Tour(res.tours[0]), res.log_prob.item(), float(res.lengths[0]))


def log_prob_of_tour(params: PolicyParams, inst: Instance, tour: Tour) -> float:
    with ag.no_grad():
        return log_prob_of_tours(params, inst.coords[None], [list(tour.order)]).item()


# checkpoints -----------------------------------------------------------------------


def save_checkpoint(params: PolicyParams, path, tags: dict | None = None) -> None:
    """One JSON manifest line followed by little-endian float64 data."""
    entries, blobs, offset = [], [], 0
    for name, t in params.tensors.items():
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        blobs.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        offset += t.size
    manifest = {
        "version": CHECKPOINT_VERSION,
        "hyper": asdict(params.hyper),
        "tensors": entries,
        "seed": params.seed,
        "tags": tags or {},
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    Path(path).write_bytes(header + b"\n" + b"".join(blobs))


def load_checkpoint(path) -> tuple[PolicyParams, dict]:
    raw = Path(path).read_bytes()
    cut = raw.find(b"\n")
    if cut < 0:
        raise ConfigError(f"{path}: missing checkpoint manifest")
    try:
        manifest = json.loads(raw[:cut])
    except json.JSONDecodeError:
        raise ConfigError(f"{path}: unreadable checkpoint manifest") from None
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
    hyper = PolicyHyper(**manifest["hyper"])
    blob = np.frombuffer(raw[cut + 1:], dtype="<f8")
    expected = {name: shape for name, shape, _ in param_layout(hyper)}
    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        if expected.get(entry["name"]) != shape:
            raise ConfigError(f"{path}: tensor {entry['name']} {shape} does not match hyper")
        size = int(np.prod(shape))
        chunk = blob[entry["offset"]:entry["offset"] + size]
        if chunk.size != size:
            raise ConfigError(f"{path}: truncated data for {entry['name']}")
        tensors[entry["name"]] = Tensor(chunk.astype(np.float64).reshape(shape), requires_grad=True)
    if set(tensors) != set(expected):
        raise ConfigError(f"{path}: manifest does not list every tensor")
    ordered = {name: tensors[name] for name, _, _ in param_layout(hyper)}
    return PolicyParams(hyper, ordered, manifest.get("seed")), manifest
