from typing import Dict, Any, List, Tuple


class ConfigValidator:
    """Validates resolved run parameters"""

    REQUIRED_PARAMS = {
        'DELTA': (int, float),
        'DICTIONARY_CAPACITY': int,
        'NEIGHBOR_K': int,
        'COMPOSE_BUDGET': int,
        'COMPOSITION_KINDS': tuple,
        'RETRIEVAL': str,
        'N_PREDICATES': int,
        'K_IMAGES': int,
        'TRIPLE_CAP': int,
        'NEGATIVE_RATIO': (int, float),
        'KL_WEIGHT': (int, float),
        'LEARNING_RATE': (int, float),
        'ITERATIONS': int,
        'HIDDEN_DIM': int,
        'VISUAL_DIM': int,
        'SPATIAL_DIM': int,
        'WORD_DIM': int,
        'RECALL_KS': tuple,
        'TAIL_SIZE': int,
        'SHOTS': int,
        'SEED': int,
    }

    # (minimum, maximum); None leaves a side open
    RANGES = {
        'DELTA': (0.0, 1.0),
        'DICTIONARY_CAPACITY': (1, None),
        'NEIGHBOR_K': (1, None),
        'COMPOSE_BUDGET': (0, None),
        'N_PREDICATES': (1, None),
        'K_IMAGES': (1, None),
        'TRIPLE_CAP': (1, None),
        'NEGATIVE_RATIO': (0.0, None),
        'KL_WEIGHT': (0.0, None),
        'ITERATIONS': (1, None),
        'HIDDEN_DIM': (0, None),
        'VISUAL_DIM': (1, None),
        'SPATIAL_DIM': (16, None),
        'WORD_DIM': (1, None),
        'TAIL_SIZE': (1, None),
        'SHOTS': (1, None),
        'SEED': (0, None),
    }

    def __init__(self, params: Dict[str, Any]):
        self.params = params
        self.errors: List[str] = []
        self.warnings: List[str] = []

    def validate_config(self) -> Tuple[bool, List[str], List[str]]:
        """Validate all configuration parameters"""
        self._check_required_params()
        self._check_ranges()
        self._check_learning_rate()
        self._check_spatial_dim()
        self._check_composition()
        self._check_recall_ks()
        self._check_neighbor_similarity()

        return len(self.errors) == 0, self.errors, self.warnings

    def _check_required_params(self):
        """Check if all required parameters exist and have correct types"""
        for param, expected_type in self.REQUIRED_PARAMS.items():
            if param not in self.params:
                self.errors.append(f"Missing required parameter: {param}")
            elif isinstance(self.params[param], bool) or not isinstance(self.params[param], expected_type):
                names = expected_type.__name__ if isinstance(expected_type, type) else 'number'
                self.errors.append(
                    f"Invalid type for {param}: expected {names}, "
                    f"got {type(self.params[param]).__name__}"
                )

    def _check_ranges(self):
        for param, (min_val, max_val) in self.RANGES.items():
            value = self.params.get(param)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                continue
            if min_val is not None and value < min_val:
                self.errors.append(f"{param} is below minimum value {min_val}")
            elif max_val is not None and value > max_val:
                self.errors.append(f"{param} exceeds maximum value {max_val}")

    def _check_learning_rate(self):
        rate = self.params.get('LEARNING_RATE')
        if isinstance(rate, (int, float)):
            if rate <= 0:
                self.errors.append("LEARNING_RATE must be positive")
            elif rate > 0.1:
                self.warnings.append(f"LEARNING_RATE is set very high ({rate})")

    def _check_spatial_dim(self):
        dim = self.params.get('SPATIAL_DIM')
        if isinstance(dim, int) and dim % 16:
            self.errors.append("SPATIAL_DIM must be a multiple of 16 (8 components x sin/cos)")

    def _check_composition(self):
        kinds = self.params.get('COMPOSITION_KINDS')
        if isinstance(kinds, tuple):
            unknown = set(kinds) - {'intra', 'inter'}
            if unknown:
                self.errors.append(f"Unknown composition kinds: {sorted(unknown)}")
            if not kinds:
                self.warnings.append("COMPOSITION_KINDS is empty; --dec runs compose nothing")
        if self.params.get('RETRIEVAL') not in ('shape', 'random'):
            self.errors.append("RETRIEVAL must be 'shape' or 'random'")

    def _check_recall_ks(self):
        ks = self.params.get('RECALL_KS')
        if isinstance(ks, tuple):
            if not ks or any(not isinstance(k, int) or k < 0 for k in ks):
                self.errors.append("RECALL_KS must be non-negative integers")

    def _check_neighbor_similarity(self):
        tau = self.params.get('MIN_NEIGHBOR_SIMILARITY')
        if tau is not None and not (-1.0 <= tau <= 1.0):
            self.errors.append("MIN_NEIGHBOR_SIMILARITY must lie in [-1, 1]")
