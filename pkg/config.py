"""
Configuration and logging setup for the second-order Beckmann toolkit.

Usage:
  config = Config.from_yaml("config.yaml")
  logger = setup_logging("logs/solve.log", verbose=True)
"""

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional
import logging

import yaml


DEFAULT_CONFIG_PATH = Path(__file__).with_name("config.yaml")


@dataclass
class Config:
    """Configuration data class"""
    default_mode: str = "auto"
    auto_rational_max_atoms: int = 200
    float_tol: float = 1e-9
    dedup_tol: float = 1e-12
    jacobi_tol: float = 1e-14
    max_sweeps: int = 100
    relative_split_tol: float = 1e-8
    max_denominator: int = 1_000_000
    max_rational_nonzeros: int = 20_000
    max_iterations: int = 200_000
    degenerate_pivot_limit: int = 500
    perturbation: float = 1e-7
    product_points: bool = True
    kernel_completions: bool = True
    verify_degree: int = 4
    svg_size: int = 600
    svg_margin: int = 20
    max_stroke: float = 8.0
    svg_segments: int = 8
    json_indent: int = 2

    @classmethod
    def from_yaml(cls, config_path: str = str(DEFAULT_CONFIG_PATH)) -> "Config":
        """Load configuration from YAML file"""
        config_file = Path(config_path)
        if not config_file.exists():
            raise FileNotFoundError(f"Configuration file not found: {config_path}")

        with open(config_file, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or {}

        numeric = data.get('numeric', {})
        spectral = data.get('spectral', {})
        lp = data.get('lp', {})
        grid = data.get('grid', {})
        grillage = data.get('grillage', {})
        output = data.get('output', {})

        values: Dict[str, Any] = {
            'default_mode': numeric.get('default_mode'),
            'auto_rational_max_atoms': numeric.get('auto_rational_max_atoms'),
            'float_tol': numeric.get('float_tol'),
            'dedup_tol': numeric.get('dedup_tol'),
            'jacobi_tol': spectral.get('jacobi_tol'),
            'max_sweeps': spectral.get('max_sweeps'),
            'relative_split_tol': spectral.get('relative_split_tol'),
            'max_denominator': spectral.get('max_denominator'),
            'max_rational_nonzeros': lp.get('max_rational_nonzeros'),
            'max_iterations': lp.get('max_iterations'),
            'degenerate_pivot_limit': lp.get('degenerate_pivot_limit'),
            'perturbation': lp.get('perturbation'),
            'product_points': grid.get('product_points'),
            'kernel_completions': grid.get('kernel_completions'),
            'verify_degree': grillage.get('verify_degree'),
            'svg_size': grillage.get('svg_size'),
            'svg_margin': grillage.get('svg_margin'),
            'max_stroke': grillage.get('max_stroke'),
            'svg_segments': grillage.get('svg_segments'),
            'json_indent': output.get('json_indent'),
        }
        # Missing keys keep the dataclass defaults
        config = cls(**{k: v for k, v in values.items() if v is not None})
        config.validate()
        return config

    def validate(self) -> None:
        """Reject values no solver run could use"""
        if self.default_mode not in ("auto", "rational", "float"):
            raise ValueError(f"numeric.default_mode must be auto, rational or float, got {self.default_mode!r}")
        if self.float_tol <= 0 or self.dedup_tol <= 0 or self.relative_split_tol <= 0:
            raise ValueError("Tolerances must be positive")
        if self.verify_degree < 2:
            raise ValueError(f"grillage.verify_degree must be at least 2, got {self.verify_degree}")
        if self.svg_segments < 1:
            raise ValueError(f"grillage.svg_segments must be at least 1, got {self.svg_segments}")

    def tolerances(self) -> Dict[str, float]:
        """Tolerances embedded in every report"""
        return {
            'float_tol': self.float_tol,
            'dedup_tol': self.dedup_tol,
            'jacobi_tol': self.jacobi_tol,
            'relative_split_tol': self.relative_split_tol,
        }

    def as_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def setup_logging(log_file: Optional[str] = None, verbose: bool = False) -> logging.Logger:
    """Setup logging for the toolkit; the console handler writes to standard error"""
    logger = logging.getLogger()
    logger.setLevel(logging.DEBUG)

    # Remove existing handlers to avoid duplicates
    logger.handlers.clear()

    formatter = logging.Formatter(
        '%(asctime)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    ch = logging.StreamHandler()
    ch.setLevel(logging.INFO if verbose else logging.ERROR)
    ch.setFormatter(formatter)
    logger.addHandler(ch)

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)

        fh = logging.FileHandler(log_file, mode='w', encoding='utf-8')
        fh.setLevel(logging.DEBUG)
        fh.setFormatter(formatter)
        logger.addHandler(fh)

        logger.info("=" * 60)
        logger.info("Second-order Beckmann toolkit - Log Started")
        logger.info("=" * 60)
        logger.info(f"Log file: {log_file}")

    return logger
