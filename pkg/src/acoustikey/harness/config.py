"""Layered configuration: shipped defaults, plan overrides, environment overrides.

Environment variables named ``ACOUSTIKEY_<SECTION>__<KEY>`` override single
keys; values are parsed as TOML literals and fall back to plain strings.
"""

from __future__ import annotations

import copy
import os
import sys
from importlib import resources

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..amplify import KltConfig
from ..bloom import BloomConfig
from ..channel import ScenarioConfig, DeviceProfile, device_profile
from ..dsp import OfdmConfig
from ..protocol import AttackConfig, SessionParams
from ..quantize import QuantizerConfig
from ..reconcile import ReconConfig

ENV_PREFIX = "ACOUSTIKEY_"


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    text = resources.files("acoustikey").joinpath("data/default.toml").read_text()
    return tomllib.loads(text)


def merge(base: dict, override: dict) -> dict:
    """Deep merge; unknown sections or keys are rejected."""
    out = copy.deepcopy(base)
    for section, values in override.items():
        if section not in out or not isinstance(values, dict):
            raise ConfigError(f"unknown config section {section!r}")
        for key, value in values.items():
            if key not in out[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            out[section][key] = value
    return out


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out: dict = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX):].lower().split("__")
        if len(parts) != 2:
            raise ConfigError(f"{name}: expected {ENV_PREFIX}<SECTION>__<KEY>")
        out.setdefault(parts[0], {})[parts[1]] = _parse_value(raw)
    return out


def set_dotted(cfg: dict, dotted: str, value) -> dict:
    section, _, key = dotted.partition(".")
    return merge(cfg, {section: {key: value}})


def load_config(overrides: dict | None = None, environ=None) -> dict:
    cfg = default_config()
    if overrides:
        cfg = merge(cfg, overrides)
    return merge(cfg, env_overrides(environ))


def flatten(cfg: dict) -> dict:
    return {f"{s}.{k}": v for s, sec in sorted(cfg.items()) for k, v in sorted(sec.items())}


def _device(name: str) -> DeviceProfile:
    return DeviceProfile.flat() if name == "flat" else device_profile(name)


def build_channel(cfg: dict):
    c = cfg["channel"]
    try:
        sc = ScenarioConfig(c["scenario"], c["distance_cm"], c["noise_floor_db"])
        return sc.build(c["reciprocity_rho"], _device(c["device_a"]), _device(c["device_b"]), c["model_seed"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"channel: {exc}") from exc


def build_params(cfg: dict) -> SessionParams:
    try:
        r, a, p = cfg["reconcile"], cfg["amplify"], cfg["protocol"]
        return SessionParams(
            quantizer=QuantizerConfig(**cfg["quantizer"]),
            bloom=BloomConfig(**cfg["bloom"]),
            recon=ReconConfig(m_rows=r["m_rows"], epsilon=r["epsilon"], round_threshold=r["round_threshold"],
                              solver=r["solver"], max_iter=r["max_iter"],
                              milp_node_limit=r["milp_node_limit"], milp_time_limit=r["milp_time_limit"]),
            klt=KltConfig(a["block_len"], a["n_eigenvectors"], a["n_training_blocks"]),
            ofdm=OfdmConfig(**cfg["ofdm"]),
            key_bits=a["key_bits"], hash_seed=a["hash_seed"], hash_margin=a["hash_margin"],
            leakage_bits_per_value=a["leakage_bits_per_value"],
            probes_per_chunk=p["probes_per_chunk"], max_probes_per_round=p["max_probes_per_round"],
            spare_segments=p["spare_segments"],
            integer_miss_limit=p["integer_miss_limit"], matrix_pool=r["matrix_pool"], max_retries=p["max_retries"],
            latency_ms=p["latency_ms"], klt_training_seed=a["training_seed"],
            smoothing_window=p["smoothing_window"],
            mismatch_prior=tuple(tuple(float(x) for x in row) for row in p["mismatch_prior"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def build_attack(cfg: dict) -> AttackConfig:
    try:
        return AttackConfig(**cfg["attack"])
    except TypeError as exc:
        raise ConfigError(f"attack: {exc}") from exc
