"""Model state, per-variant forward/backward composition, checkpoint I/O.

A model is a flat dict of named parameter tensors whose set depends on the
detection variant:

* ``baseline``                  — classifier_weight (C, D), classifier_bias
* ``max`` / ``mean``            — classifier over [v_t, pooled] (C, 2D)
* ``pyramid3``                  — classifier over [v_t, pyramid] (C, 8D)
* ``single``                    — one filter per class: filter_centers /
                                  filter_widths (C, N), classifier (C, D+N*D)
* ``attended``                  — M shared filters (M, N), attention_logits
                                  (C, M), classifier (C, D+N*D)
* ``relative``                  — as attended, filters materialized at the
                                  fixed kernel length L instead of T

``loss_and_grads`` returns the mean BCE over (frame, class) cells and exact
hand-derived gradients for every parameter, obtained by chaining the filter,
pooling and detector backward passes. All functions are pure in the
parameters and dtype-preserving; checkpoints round-trip bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import detector, pooling
from .errors import (
    BadMagicError,
    FormatError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .filters import materialize_stack, stack_backward
from .pooling import RelativeConfig, baseline_context_blocks

__all__ = [
    "VARIANTS",
    "FILTER_VARIANTS",
    "ModelState",
    "init_model",
    "context_dim",
    "forward_logits",
    "predict_probabilities",
    "loss_and_grads",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]

VARIANTS = ("baseline", "max", "mean", "pyramid3", "single", "attended", "relative")
FILTER_VARIANTS = ("single", "attended", "relative")

CHECKPOINT_MAGIC = b"TSFM"
CHECKPOINT_VERSION = 1


@dataclass
class ModelState:
    """Everything needed to continue training exactly where it stopped."""

    variant: str
    feature_dim: int
    num_classes: int
    num_distributions: int
    num_filters: int
    kernel_length: int
    class_names: list[str]
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    iteration: int = 0
    rng_state: dict | None = None
    config: dict = field(default_factory=dict)

    def parameter_names(self) -> list[str]:
        return sorted(self.params)

    def clone_params(self, dtype=None) -> dict[str, np.ndarray]:
        return {
            k: (v.astype(dtype) if dtype is not None else v.copy())
            for k, v in self.params.items()
        }


def context_dim(variant: str, feature_dim: int, num_distributions: int) -> int:
    if variant == "baseline":
        return 0
    if variant in baseline_context_blocks:
        return baseline_context_blocks[variant] * feature_dim
    return num_distributions * feature_dim


def init_model(variant: str, feature_dim: int, num_classes: int,
               class_names: list[str], num_distributions: int, num_filters: int,
               kernel_length: int, rng: np.random.Generator,
               dtype=np.float32) -> ModelState:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    if variant == "relative":
        RelativeConfig(kernel_length)  # validates odd, positive

    n = num_distributions if variant in FILTER_VARIANTS else 0
    m = {"single": num_classes, "attended": num_filters,
         "relative": num_filters}.get(variant, 0)
    k = context_dim(variant, feature_dim, num_distributions)

    params: dict[str, np.ndarray] = {}
    if variant in FILTER_VARIANTS:
        params["filter_centers"] = rng.uniform(-0.5, 0.5, (m, n)).astype(dtype)
        params["filter_widths"] = rng.uniform(-0.5, 0.5, (m, n)).astype(dtype)
    if variant in ("attended", "relative"):
        params["attention_logits"] = np.zeros((num_classes, m), dtype=dtype)
    a = (1.0 / (feature_dim + k)) ** 0.5
    params["classifier_weight"] = rng.uniform(
        -a, a, (num_classes, feature_dim + k)
    ).astype(dtype)
    params["classifier_bias"] = np.zeros(num_classes, dtype=dtype)

    return ModelState(
        variant=variant,
        feature_dim=feature_dim,
        num_classes=num_classes,
        num_distributions=n,
        num_filters=m,
        kernel_length=kernel_length if variant == "relative" else 0,
        class_names=list(class_names),
        params=params,
    )


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _context(params, variant, kernel_length, features):
    """Context tensor fed to the classifier: None, (K,) broadcast per class,
    (C, K), or per-frame (T, C, K)."""
    if variant == "baseline":
        return None
    if variant in baseline_context_blocks:
        ctx = pooling.pool_baseline(variant, features)
        return np.broadcast_to(ctx, (params["classifier_weight"].shape[0],) + ctx.shape)
    stack, _, _, _ = materialize_stack(
        params["filter_centers"], params["filter_widths"],
        kernel_length if variant == "relative" else features.shape[0],
    )
    if variant == "single":
        # class c pools with its own filter: (C, T, N) x (T, D) -> (C, N*D)
        mixed = np.einsum("ctn,td->cnd", stack, features, optimize=True)
        return mixed.reshape(stack.shape[0], -1)
    if variant == "attended":
        return pooling.pool_attended(stack, params["attention_logits"], features).values
    return pooling.pool_relative(stack, params["attention_logits"], features,
                                 RelativeConfig(kernel_length))


def forward_logits(state: ModelState, features: np.ndarray) -> np.ndarray:
    """Per-frame class scores (T, C) before the sigmoid."""
    p = state.params
    ctx = _context(p, state.variant, state.kernel_length, features)
    return detector.frame_logits(p["classifier_weight"], p["classifier_bias"],
                                 features, ctx)


def predict_probabilities(state: ModelState, features: np.ndarray) -> np.ndarray:
    return detector.sigmoid(forward_logits(state, features))


def loss_and_grads(state: ModelState, features: np.ndarray, labels: np.ndarray):
    """Mean BCE and exact gradients for every parameter tensor."""
    p = state.params
    variant = state.variant
    features = np.asarray(features)
    T, D = features.shape
    rel_cache = None
    stack = None
    if variant == "relative":
        stack, _, _, _ = materialize_stack(
            p["filter_centers"], p["filter_widths"], state.kernel_length
        )
        ctx, rel_cache = pooling._relative_state(
            stack, p["attention_logits"], features, RelativeConfig(state.kernel_length)
        )
    else:
        ctx = _context(p, variant, state.kernel_length, features)

    logits = detector.frame_logits(p["classifier_weight"], p["classifier_bias"],
                                   features, ctx)
    loss = detector.bce_loss(logits, labels)
    dlogits = detector.bce_backward(logits, labels)

    w = p["classifier_weight"]
    grads: dict[str, np.ndarray] = {}
    grads["classifier_bias"] = dlogits.sum(axis=0)
    if variant == "baseline":
        grads["classifier_weight"] = dlogits.T @ features
        return loss, grads

    w_frame, w_ctx = w[:, :D], w[:, D:]
    d_w_frame = dlogits.T @ features
    if ctx.ndim == 2:
        col = dlogits.sum(axis=0)  # context constant over frames
        d_w_ctx = col[:, None] * ctx
        d_ctx = col[:, None] * w_ctx
    else:
        d_w_ctx = np.einsum("tc,tck->ck", dlogits, ctx, optimize=True)
        d_ctx = np.einsum("tc,ck->tck", dlogits, w_ctx, optimize=True)
    grads["classifier_weight"] = np.concatenate([d_w_frame, d_w_ctx], axis=1)

    if variant in baseline_context_blocks:
        # rows of d_ctx are per-class gradients of one shared pooled vector
        return loss, grads

    length = state.kernel_length if variant == "relative" else T
    if stack is None:
        stack, _, _, _ = materialize_stack(p["filter_centers"], p["filter_widths"],
                                           length)
    if variant == "single":
        c, _, n = stack.shape
        up = d_ctx.reshape(c, n, D)
        d_stack = np.einsum("cnd,td->ctn", up, features, optimize=True)
    elif variant == "attended":
        d_stack, d_logits_att, _ = pooling.pool_attended_backward(
            stack, p["attention_logits"], features, d_ctx
        )
        grads["attention_logits"] = d_logits_att
    else:
        d_stack, d_logits_att, _ = pooling._relative_grads(rel_cache, d_ctx)
        grads["attention_logits"] = d_logits_att

    dc, dw_ = stack_backward(p["filter_centers"], p["filter_widths"], length, d_stack)
    grads["filter_centers"] = dc
    grads["filter_widths"] = dw_
    return loss, grads


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

def _tensor_entries(state: ModelState):
    for name in sorted(state.params):
        yield f"params/{name}", state.params[name]
    for name in sorted(state.adam_m):
        yield f"adam_m/{name}", state.adam_m[name]
    for name in sorted(state.adam_v):
        yield f"adam_v/{name}", state.adam_v[name]


def save_checkpoint(state: ModelState, path) -> None:
    tensors = []
    payload = bytearray()
    for name, arr in _tensor_entries(state):
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        tensors.append(
            {"name": name, "dtype": le.dtype.str, "shape": list(arr.shape)}
        )
        payload += le.tobytes()
    header = json.dumps(
        {
            "variant": state.variant,
            "feature_dim": state.feature_dim,
            "num_classes": state.num_classes,
            "num_distributions": state.num_distributions,
            "num_filters": state.num_filters,
            "kernel_length": state.kernel_length,
            "class_names": state.class_names,
            "adam_t": state.adam_t,
            "iteration": state.iteration,
            "rng_state": state.rng_state,
            "config": state.config,
            "tensors": tensors,
        }
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(payload)


def load_checkpoint(path) -> ModelState:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise TruncatedPayloadError(f"{path}: shorter than the checkpoint header")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version}")
    if len(raw) < 12 + header_len:
        raise TruncatedPayloadError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable checkpoint header: {exc}") from exc

    offset = 12 + header_len
    groups: dict[str, dict[str, np.ndarray]] = {"params": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["tensors"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        nbytes = dt.itemsize * count
        if offset + nbytes > len(raw):
            raise TruncatedPayloadError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(raw[offset : offset + nbytes], dtype=dt).reshape(
            entry["shape"]
        )
        offset += nbytes
        group, name = entry["name"].split("/", 1)
        groups[group][name] = arr.astype(dt.newbyteorder("="))

    return ModelState(
        variant=header["variant"],
        feature_dim=header["feature_dim"],
        num_classes=header["num_classes"],
        num_distributions=header["num_distributions"],
        num_filters=header["num_filters"],
        kernel_length=header["kernel_length"],
        class_names=header["class_names"],
        params=groups["params"],
        adam_m=groups["adam_m"],
        adam_v=groups["adam_v"],
        adam_t=header["adam_t"],
        iteration=header["iteration"],
        rng_state=header["rng_state"],
        config=header["config"],
    )
