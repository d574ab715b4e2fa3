"""Flat ``key = value`` pipeline settings.

One setting per line, ``#`` starts a comment. Unknown keys are rejected and
every value is parsed and range-checked when loaded.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .encoder import MINING_MODES, TrainConfig
from .errors import ContractError, InputError
from .fourier import TRUNCATION_ORDERS
from .synth import BASE_SHAPES, EvolutionConfig


@dataclass(frozen=True)
class PipelineConfig:
    # masks and contours
    threshold: float = 250.0
    resample_points: int = 1024
    # descriptors
    harmonics: int = 100
    truncation: str = "amplitude"
    report_k: str = "20,50,100,200"
    suspect_threshold: float = 5.0
    # encoder
    margin: float = 0.2
    learning_rate: float = 1e-4
    epochs: int = 50
    mini_batch: int = 8
    accumulation_steps: int = 14
    mining: str = "batch-hard"
    normalize_embeddings: bool = False
    standardize: bool = False
    # trees and scores
    tree_method: str = "upgma"
    distance: str = "euclidean"
    precision: int = 6
    baseline_trials: int = 100
    # synthetic data
    n_species: int = 16
    per_species: int = 8
    branch_sigma: float = 0.6
    within_sigma: float = 0.15
    base_shape: str = "beetle-template"
    raster: bool = True
    seed: int = 0

    def __post_init__(self):
        checks = [
            (0 < self.threshold <= 255, "threshold must be in (0, 255]"),
            (self.resample_points >= 8, "resample_points must be >= 8"),
            (self.harmonics >= 1, "harmonics must be >= 1"),
            (self.resample_points > 2 * self.harmonics, "resample_points must exceed 2 * harmonics"),
            (self.truncation in TRUNCATION_ORDERS, f"truncation must be one of {TRUNCATION_ORDERS}"),
            (self.suspect_threshold >= 0, "suspect_threshold must be >= 0"),
            (self.margin > 0, "margin must be > 0"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.mini_batch >= 4 and self.mini_batch % 2 == 0, "mini_batch must be an even number >= 4"),
            (self.accumulation_steps >= 1, "accumulation_steps must be >= 1"),
            (self.mining in MINING_MODES, f"mining must be one of {MINING_MODES}"),
            (self.tree_method in ("upgma", "nj"), "tree_method must be upgma or nj"),
            (self.distance in ("euclidean", "cosine"), "distance must be euclidean or cosine"),
            (0 <= self.precision <= 17, "precision must be in 0..17"),
            (self.baseline_trials >= 2, "baseline_trials must be >= 2"),
            (self.n_species >= 2, "n_species must be >= 2"),
            (self.per_species >= 2, "per_species must be >= 2"),
            (self.branch_sigma >= 0 and self.within_sigma >= 0, "sigmas must be >= 0"),
            (self.base_shape in BASE_SHAPES, f"base_shape must be one of {BASE_SHAPES}"),
            (self.seed >= 0, "seed must be >= 0"),
        ]
        for ok, message in checks:
            if not ok:
                raise ContractError(message)
        ks = self.report_ks
        if not ks or any(not 1 <= k <= 2 * self.harmonics for k in ks):
            raise ContractError(f"report_k entries must be in 1..{2 * self.harmonics}")

    @property
    def report_ks(self) -> list[int]:
        try:
            return [int(k) for k in self.report_k.split(",") if k.strip()]
        except ValueError:
            raise ContractError(f"report_k must be a comma-separated list of integers, got {self.report_k!r}") from None

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, mini_batch=self.mini_batch, accumulation_steps=self.accumulation_steps,
            margin=self.margin, learning_rate=self.learning_rate, seed=self.seed, mining=self.mining,
            normalize_embeddings=self.normalize_embeddings, standardize=self.standardize)

    def evolution_config(self) -> EvolutionConfig:
        return EvolutionConfig(
            n_species=self.n_species, per_species=self.per_species, branch_sigma=self.branch_sigma,
            within_sigma=self.within_sigma, seed=self.seed, base_shape=self.base_shape,
            n_harmonics=self.harmonics)

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in asdict(self).items())


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse(name: str, kind, text: str):
    text = text.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ContractError(f"{name}: cannot parse {text!r} as {kind.__name__}") from None


_TYPES = {f.name: {"bool": bool, "int": int, "float": float, "str": str}[f.type] for f in fields(PipelineConfig)}


def apply_overrides(config: PipelineConfig, pairs: dict[str, str]) -> PipelineConfig:
    unknown = sorted(set(pairs) - set(_TYPES))
    if unknown:
        raise ContractError(f"unknown config keys: {', '.join(unknown)}")
    return replace(config, **{k: _parse(k, _TYPES[k], v) for k, v in pairs.items()})


def parse_config_text(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    pairs = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ContractError(f"line {n}: duplicate key {key!r}")
        pairs[key] = value
    return apply_overrides(base or PipelineConfig(), pairs)


def load_config(path) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: unreadable config ({exc.strerror})") from None
    return parse_config_text(text)
