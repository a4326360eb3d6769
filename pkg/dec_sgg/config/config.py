import os
from typing import Any, Dict, Mapping, Optional

from dotenv import dotenv_values

from ..error_handler import ConfigError

CONFIG = {
    # Anchor selection
    'DELTA': 0.3,  # IoU threshold below which a pair is decomposable

    # Visual components dictionary
    'DICTIONARY_CAPACITY': 3000,
    'NEIGHBOR_K': 3,  # semantically similar categories for inter-class retrieval
    'MIN_NEIGHBOR_SIMILARITY': None,  # cosine floor for inter-class pools, None disables

    # Composition
    'COMPOSE_BUDGET': 10000,
    'COMPOSITION_KINDS': ('intra', 'inter'),
    'RETRIEVAL': 'shape',  # 'shape' ranks candidates by box shape, 'random' draws one

    # Balanced sampling
    'N_PREDICATES': 5,
    'K_IMAGES': 1,

    # Training
    'TRIPLE_CAP': 256,  # per-image relation triples
    'NEGATIVE_RATIO': 1.0,  # no-relation pairs per annotated pair
    'KL_WEIGHT': 1.0,
    'LEARNING_RATE': 0.01,
    'ITERATIONS': 5000,
    'HIDDEN_DIM': 0,  # 0 keeps object features unrefined
    'LOG_EVERY': 100,

    # Feature dimensions
    'VISUAL_DIM': 64,
    'SPATIAL_DIM': 128,
    'WORD_DIM': 200,

    # Evaluation
    'RECALL_KS': (20, 50, 100),
    'EXCLUDE_ABSENT_PREDICATES': True,
    'TAIL_SIZE': 15,
    'SHOTS': 5,

    # Reproducibility
    'SEED': 0,

    # Logging settings
    'LOGGING': {
        'level': 'INFO',
        'dir_name': 'logs',
    },
}

PROFILES = {
    'desk': {},
    'paper': {
        'VISUAL_DIM': 4096,
        'ITERATIONS': 130000,
        'COMPOSE_BUDGET': 600000,
    },
}


def profile_defaults(profile: str) -> Dict[str, Any]:
    """Return a fresh copy of the defaults of a named profile"""
    if profile not in PROFILES:
        raise ConfigError(f"Unknown profile: {profile}", {'profiles': sorted(PROFILES)})
    params = {k: v for k, v in CONFIG.items() if k != 'LOGGING'}
    params.update(PROFILES[profile])
    return params


def load_config_file(path: str) -> Dict[str, str]:
    """Read a ``key = value`` experiment file; keys are case-insensitive"""
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}", {'path': path})
    return {k.strip().upper(): v for k, v in dotenv_values(path).items() if v is not None}


def coerce_value(key: str, raw: Any, default: Any) -> Any:
    """Convert a textual override to the type of the default"""
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if default is None:
            return None if text.lower() in ('', 'none') else float(text)
        if isinstance(default, bool):
            if text.lower() in ('1', 'true', 'yes', 'on'):
                return True
            if text.lower() in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [item.strip() for item in text.split(',') if item.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(item) for item in items)
            return tuple(items)
    except ValueError:
        raise ConfigError(f"Invalid value for {key}: {raw!r}", {'key': key, 'value': raw})
    return text


def resolve_params(profile: str = 'desk',
                   config_file: Optional[str] = None,
                   overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    """Profile defaults, then the config file, then flag overrides (flags win)"""
    params = profile_defaults(profile)
    layers = []
    if config_file:
        layers.append(load_config_file(config_file))
    if overrides:
        layers.append({k.upper(): v for k, v in overrides.items() if v is not None})
    for layer in layers:
        for key, raw in layer.items():
            if key not in params:
                raise ConfigError(f"Unknown configuration key: {key}", {'key': key})
            params[key] = coerce_value(key, raw, params[key])
    return params
