"""
Simple Configuration System using JSON
Users edit config.json - no environment variables needed!
"""

import json
from pathlib import Path

PROJECT_ROOT = Path(__file__).parent.parent
CONFIG_FILE = PROJECT_ROOT / "config.json"

# Default configuration
DEFAULT_CONFIG = {
    "output_dir": str(PROJECT_ROOT / "results"),
    "codebook_dir": str(PROJECT_ROOT / "data" / "codebooks"),
    "recipes_dir": str(PROJECT_ROOT / "recipes"),
    "workers": 1,
    "master_seed": 20240611,
    "simulation": {
        "packets_per_point": 1000,
        "n_max": 4,
        "l_info": 2020,
        "decoder_iterations": 8,
        "interleaver_seed": 7,
        "default_gamma": 0.01,
    },
    "logging": {"level": "INFO"},
}


def _merge(defaults, user):
    """Shallow per-section merge so older config files keep working"""
    merged = dict(defaults)
    for key, value in user.items():
        if isinstance(value, dict) and isinstance(defaults.get(key), dict):
            merged[key] = {**defaults[key], **value}
        else:
            merged[key] = value
    return merged


def load_config():
    """Load configuration from config.json, create if doesn't exist"""
    if not CONFIG_FILE.exists():
        # Create default config file
        try:
            with open(CONFIG_FILE, "w") as f:
                json.dump(DEFAULT_CONFIG, f, indent=2)
            print(f"Created default config at: {CONFIG_FILE}")
            print("Edit this file to customize paths and simulation defaults!")
        except OSError:
            # read-only checkout, run on defaults
            pass
        return DEFAULT_CONFIG

    with open(CONFIG_FILE, "r") as f:
        return _merge(DEFAULT_CONFIG, json.load(f))


# Load configuration
config = load_config()

# Export configuration values
OUTPUT_DIR = Path(config["output_dir"])
CODEBOOK_DIR = Path(config["codebook_dir"])
RECIPES_DIR = Path(config["recipes_dir"])

WORKERS = int(config["workers"])
MASTER_SEED = int(config["master_seed"])

PACKETS_PER_POINT = int(config["simulation"]["packets_per_point"])
N_MAX = int(config["simulation"]["n_max"])
L_INFO = int(config["simulation"]["l_info"])
DECODER_ITERATIONS = int(config["simulation"]["decoder_iterations"])
INTERLEAVER_SEED = int(config["simulation"]["interleaver_seed"])
DEFAULT_GAMMA = float(config["simulation"]["default_gamma"])

LOG_LEVEL = config["logging"]["level"]

# Project structure
CORE_DIR = PROJECT_ROOT / "core"


def validate_config():
    """Check if configured paths and values make sense"""
    issues = []

    if not CODEBOOK_DIR.exists():
        issues.append(f"  Codebook directory not found: {CODEBOOK_DIR}")
        issues.append("   Edit config.json to point at data/codebooks")

    if WORKERS < 1:
        issues.append(f"  workers must be >= 1, got {WORKERS}")

    if not 0.0 <= DEFAULT_GAMMA <= 1.0:
        issues.append(f"  default_gamma must lie in [0, 1], got {DEFAULT_GAMMA}")

    if L_INFO <= 16:
        issues.append(f"  l_info must exceed the 16 CRC bits, got {L_INFO}")

    if issues:
        print("=" * 60)
        print("Configuration Issues:")
        print("=" * 60)
        for issue in issues:
            print(issue)
        print("=" * 60)
        return False

    print(" Configuration is valid!")
    return True


if __name__ == "__main__":
    print("=" * 60)
    print("CORA - Configuration")
    print("=" * 60)
    print(f"Config file: {CONFIG_FILE}")
    print(f"Output directory: {OUTPUT_DIR}")
    print(f"Codebook directory: {CODEBOOK_DIR}")
    print(f"Workers: {WORKERS}")
    print(f"Master seed: {MASTER_SEED}")
    print(f"Packets per point: {PACKETS_PER_POINT}")
    print(f"L_info: {L_INFO}  N_max: {N_MAX}  iterations: {DECODER_ITERATIONS}")
    print("=" * 60)
    print()
    validate_config()
