"""Flat key=value config files with namespaced keys (model.*, train.*,
gen.*, serve.*). Lines starting with '#' and blank lines are ignored."""

from __future__ import annotations

from dataclasses import replace

from .corpus import GeneratorConfig
from .model import AbmConfig


class ConfigFileError(ValueError):
    pass


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_config_file(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _typed(kv: dict, key: str, cast, default):
    if key not in kv:
        return default
    try:
        if cast is bool:
            return kv[key].lower() in ("1", "true", "yes")
        return cast(kv[key])
    except ValueError as exc:
        raise ConfigFileError(f"bad value for {key}: {kv[key]!r}") from exc


_GEN_FIELDS = {
    "num_domains": int, "num_intents": int, "zipf_alpha": float,
    "vocab_size": int, "rare_token_pool_size": int, "asr_noise_rate": float,
    "weak_label_flip_rate": float, "sessions_train": int, "sessions_valid": int,
    "sessions_test": int, "seed": int, "k_best": int, "rare_rate": float,
    "max_query_len": int, "max_title_len": int, "max_gen_query_len": int,
    "num_slots": int, "max_slots": int, "min_turns": int, "max_turns": int,
    "window_turns": int, "rewrite_revert_fraction": float,
}

_MIX_KEYS = ("none", "asr", "nlu", "ir", "user")


def generator_config(kv: dict) -> GeneratorConfig:
    base = GeneratorConfig()
    overrides = {}
    for name, cast in _GEN_FIELDS.items():
        value = _typed(kv, f"gen.{name}", cast, None)
        if value is not None:
            overrides[name] = value
    mix = dict(base.error_type_mix)
    touched = False
    for key in _MIX_KEYS:
        value = _typed(kv, f"gen.mix_{key}", float, None)
        if value is not None:
            mix[key.upper()] = value
            touched = True
    if touched:
        overrides["error_type_mix"] = mix
    cfg = replace(base, **overrides)
    cfg.validate()
    return cfg


_MODEL_FIELDS = {
    "embed_size": int, "n_heads": int, "layers_asr": int, "layers_qr": int,
    "layers_sess": int, "turns": int, "dropout_rate": float,
}


def model_config(kv: dict, corpus_meta: dict | None = None) -> AbmConfig:
    """Architecture config; corpus metadata pins vocabulary sizes and lengths."""
    base = AbmConfig()
    overrides = {}
    if corpus_meta:
        for name in ("vocab_size", "num_domains", "num_intents", "num_slots",
                     "max_slots", "k_best", "max_query_len", "max_title_len"):
            if name in corpus_meta:
                overrides[name] = corpus_meta[name]
    for name, cast in _MODEL_FIELDS.items():
        value = _typed(kv, f"model.{name}", cast, None)
        if value is not None:
            overrides[name] = value
    return replace(base, **overrides)


def train_settings(kv: dict) -> dict:
    return {
        "lr": _typed(kv, "train.lr", float, 1.2e-3),
        "batch_size": _typed(kv, "train.batch_size", int, 32),
        "epochs": _typed(kv, "train.epochs", int, 5),
        "seed": _typed(kv, "train.seed", int, 0),
        "w_contrastive": _typed(kv, "train.w_contrastive", float, 1e-2),
        "w_domain_intent": _typed(kv, "train.w_domain_intent", float, 1e-1),
        "temperature": _typed(kv, "train.temperature", float, 0.05),
        "precision": _typed(kv, "train.precision", str, "f32"),
        "ablation": _typed(kv, "train.ablation", str, "ABM"),
    }


def serve_threshold(kv: dict, default: float | None = None) -> float | None:
    return _typed(kv, "serve.threshold", float, default)
