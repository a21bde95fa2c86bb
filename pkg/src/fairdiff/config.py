"""Run configuration, config hashing, and atomic artifact files.

A run is described by one JSON file. The model identity hash covers the
inputs that determine prepared data and trained weights (data, schema,
split, schedule, denoiser, codec); sampling knobs such as level, seeds, and
guidance weights may be overridden per invocation without orphaning
artifacts. Every artifact embeds that hash so stale pairings are refused.
"""

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

from .denoiser import DenoiserConfig
from .evaluation import CLASSIFIER_KINDS, DEFAULT_WEIGHTS
from .sampling import GuidanceConfig

ARTIFACT_MAGIC = "fair-tab-diffusion-artifact"
ARTIFACT_VERSION = 1
MIN_TIMESTEPS = 10

DEFAULT_CONFIG = {
    "data_csv": None,
    "schema_json": None,
    "out_dir": "out",
    "split_seed": 0,
    "schedule": {"kind": "cosine", "T": 100},
    "denoiser": DenoiserConfig().to_dict(),
    "codec": {"mode": "identity", "latent_dim": None},
    "guidance": GuidanceConfig().to_dict(),
    "balancing_level": 0,
    "sample_count": 1000,
    "seeds": [0],
    "evaluation": {
        "classifier": "stumps",
        "weights": list(DEFAULT_WEIGHTS),
        "sensitive_attribute": None,
    },
    "sweep_levels": list(range(11)),
}

# keys that define the prepared-data + trained-model identity
HASH_KEYS = ("data_csv", "schema_json", "split_seed", "schedule", "denoiser", "codec")


def _merge(base, override):
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ValueError(f"unknown config key {key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value)
        else:
            out[key] = value
    return out


def canonical_json(payload):
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(raw):
    identity = {k: raw[k] for k in HASH_KEYS}
    return hashlib.sha256(canonical_json(identity).encode("utf-8")).hexdigest()


@dataclass
class RunConfig:
    raw: dict = field(repr=False)
    data_csv: str
    schema_json: str
    out_dir: str
    split_seed: int
    schedule_kind: str
    timesteps: int
    denoiser: DenoiserConfig
    codec_mode: str
    latent_dim: object
    guidance: GuidanceConfig
    balancing_level: int
    sample_count: int
    seeds: list
    classifier: str
    weights: tuple
    sensitive_attribute: object
    sweep_levels: list

    @property
    def hash(self):
        return config_hash(self.raw)

    @classmethod
    def from_dict(cls, raw, check_paths=True):
        raw = _merge(DEFAULT_CONFIG, raw)
        if not raw["data_csv"] or not raw["schema_json"]:
            raise ValueError("config must set data_csv and schema_json")
        if check_paths:
            for key in ("data_csv", "schema_json"):
                if not os.path.exists(raw[key]):
                    raise ValueError(f"{key} does not exist: {raw[key]}")
        sched = raw["schedule"]
        if sched["T"] < MIN_TIMESTEPS:
            raise ValueError(f"schedule T must be at least {MIN_TIMESTEPS}")
        if sched["kind"] not in ("linear", "cosine"):
            raise ValueError("schedule kind must be linear or cosine")
        level = int(raw["balancing_level"])
        if not 0 <= level <= 10:
            raise ValueError("balancing_level must lie in [0, 10]")
        if raw["sample_count"] < 0:
            raise ValueError("sample_count must be non-negative")
        seeds = [int(s) for s in raw["seeds"]]
        if not seeds or any(s < 0 for s in seeds):
            raise ValueError("seeds must be a non-empty list of non-negative ints")
        levels = [int(l) for l in raw["sweep_levels"]]
        if any(not 0 <= l <= 10 for l in levels):
            raise ValueError("sweep_levels must lie in [0, 10]")
        ev = raw["evaluation"]
        if ev["classifier"] not in CLASSIFIER_KINDS:
            raise ValueError(f"classifier must be one of {CLASSIFIER_KINDS}")
        weights = tuple(float(w) for w in ev["weights"])
        if len(weights) != 3:
            raise ValueError("evaluation weights must have three entries")
        return cls(
            raw=raw,
            data_csv=raw["data_csv"],
            schema_json=raw["schema_json"],
            out_dir=raw["out_dir"],
            split_seed=int(raw["split_seed"]),
            schedule_kind=sched["kind"],
            timesteps=int(sched["T"]),
            denoiser=DenoiserConfig.from_dict(raw["denoiser"]),
            codec_mode=raw["codec"]["mode"],
            latent_dim=raw["codec"]["latent_dim"],
            guidance=GuidanceConfig.from_dict(raw["guidance"]),
            balancing_level=level,
            sample_count=int(raw["sample_count"]),
            seeds=seeds,
            classifier=ev["classifier"],
            weights=weights,
            sensitive_attribute=ev["sensitive_attribute"],
            sweep_levels=levels,
        )

    @classmethod
    def load(cls, path, overrides=None, check_paths=True):
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        for dotted, value in (overrides or {}).items():
            node = raw
            *head, last = dotted.split(".")
            for part in head:
                node = node.setdefault(part, {})
            node[last] = value
        return cls.from_dict(raw, check_paths=check_paths)


def set_dotted(overrides, expr):
    """Parse one --set KEY.PATH=VALUE expression; values are JSON when valid."""
    if "=" not in expr:
        raise ValueError(f"--set expects KEY=VALUE, got {expr!r}")
    key, _, raw_value = expr.partition("=")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    overrides[key.strip()] = value
    return overrides


def atomic_write_text(path, text):
    """Write via a temp file in the same directory, then replace."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_artifact(path, kind, cfg_hash, payload):
    """JSON artifact with a versioned magic header and the config hash."""
    body = {
        "magic": ARTIFACT_MAGIC,
        "version": ARTIFACT_VERSION,
        "kind": kind,
        "config_hash": cfg_hash,
    }
    body.update(payload)
    atomic_write_text(path, json.dumps(body, indent=1, sort_keys=True) + "\n")


def read_artifact(path, kind, expected_hash=None):
    with open(path, "r", encoding="utf-8") as fh:
        body = json.load(fh)
    if body.get("magic") != ARTIFACT_MAGIC:
        raise ValueError(f"{path}: not a recognized artifact file")
    if body.get("version") != ARTIFACT_VERSION:
        raise ValueError(f"{path}: unsupported artifact version {body.get('version')}")
    if body.get("kind") != kind:
        raise ValueError(f"{path}: expected {kind} artifact, found {body.get('kind')}")
    if expected_hash is not None and body.get("config_hash") != expected_hash:
        raise ValueError(
            f"{path}: config hash mismatch; artifact was built from a "
            f"different configuration"
        )
    return body
