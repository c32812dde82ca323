"""Model persistence: named float64 tensors plus a text manifest.

A model is two files: `<path>` is an npz container of little-endian 64-bit
tensors (network weights and, when present, feature-normalization vectors)
and `<path>.manifest.txt` is a key=value description (layer sizes, dropout
rate, logit epsilon, normalization mode). Floats in the manifest are written
with repr() so the round trip is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..stft import FeatureStats
from .network import RefinerParams, init_params
from .optimizer import OptimizerState
from .targets import LOGIT_EPS


@dataclass(frozen=True)
class ModelBundle:
    """Everything needed to run the refiner on new audio."""

    params: RefinerParams
    stats: FeatureStats  # may be None for per-utterance normalization
    logit_eps: float = LOGIT_EPS
    feature_norm: str = "corpus"


def _manifest_path(path):
    return Path(str(path) + ".manifest.txt")


def save_model(path, bundle: ModelBundle):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: np.ascontiguousarray(t, dtype="<f8") for name, t in bundle.params.tensors().items()}
    if bundle.stats is not None:
        arrays["stats.mean"] = np.ascontiguousarray(bundle.stats.mean, dtype="<f8")
        arrays["stats.std"] = np.ascontiguousarray(bundle.stats.std, dtype="<f8")
    np.savez(path, **arrays)
    if path.suffix != ".npz":  # np.savez appends .npz when missing
        path.with_name(path.name + ".npz").replace(path)

    params = bundle.params
    lines = [
        f"n_layers = {len(params.layers)}",
        f"hidden = {params.layers[0].fwd.hidden}",
        f"freq_count = {params.freq_count}",
        f"dropout_rate = {params.dropout_rate!r}",
        f"l2_coefficient = {params.l2_coefficient!r}",
        f"logit_eps = {bundle.logit_eps!r}",
        f"feature_norm = {bundle.feature_norm}",
        f"has_stats = {int(bundle.stats is not None)}",
    ]
    _manifest_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_manifest(path):
    manifest = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        manifest[key.strip()] = value.strip()
    return manifest


def load_model(path) -> ModelBundle:
    path = Path(path)
    manifest = _parse_manifest(_manifest_path(path))
    with np.load(path) as archive:
        arrays = {name: archive[name] for name in archive.files}
    template = init_params(
        freq_count=int(manifest["freq_count"]),
        hidden=int(manifest["hidden"]),
        n_layers=int(manifest["n_layers"]),
        dropout_rate=float(manifest["dropout_rate"]),
        l2_coefficient=float(manifest["l2_coefficient"]),
    )
    params = template.with_tensors({k: v for k, v in arrays.items() if not k.startswith("stats.")})
    stats = None
    if int(manifest.get("has_stats", 0)):
        stats = FeatureStats(mean=arrays["stats.mean"], std=arrays["stats.std"])
    return ModelBundle(
        params=params,
        stats=stats,
        logit_eps=float(manifest.get("logit_eps", LOGIT_EPS)),
        feature_norm=manifest.get("feature_norm", "corpus"),
    )


def save_checkpoint(path, bundle: ModelBundle, state: OptimizerState, history):
    """Training checkpoint: the model plus optimizer moments and loss history."""
    save_model(path, bundle)
    extra = {f"opt.m.{k}": v for k, v in state.m.items()}
    extra.update({f"opt.v.{k}": v for k, v in state.v.items()})
    extra["opt.step_count"] = np.array(state.step_count)
    extra["opt.hyper"] = np.array(
        [state.learning_rate, state.beta1, state.beta2, state.epsilon]
    )
    extra["history_json"] = np.frombuffer(json.dumps(history).encode("utf-8"), dtype=np.uint8)
    ckpt = Path(str(path) + ".ckpt.npz")
    np.savez(ckpt, **extra)


def load_checkpoint(path):
    """Returns (ModelBundle, OptimizerState, history) saved by save_checkpoint."""
    bundle = load_model(path)
    with np.load(Path(str(path) + ".ckpt.npz")) as archive:
        arrays = {name: archive[name] for name in archive.files}
    lr, b1, b2, eps = arrays["opt.hyper"]
    state = OptimizerState(
        learning_rate=float(lr),
        beta1=float(b1),
        beta2=float(b2),
        epsilon=float(eps),
        step_count=int(arrays["opt.step_count"]),
        m={k[len("opt.m."):]: v for k, v in arrays.items() if k.startswith("opt.m.")},
        v={k[len("opt.v."):]: v for k, v in arrays.items() if k.startswith("opt.v.")},
    )
    history = json.loads(bytes(arrays["history_json"]).decode("utf-8"))
    return bundle, state, history
