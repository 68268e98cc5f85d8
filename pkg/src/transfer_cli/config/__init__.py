import os
from typing import Any, Dict, Optional

import yaml

from transferability.errors import ValidationError

CONFIG_FILE_NAME = "transfer_cli_config.yaml"


def _read_yaml(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as stream:
        try:
            data = yaml.safe_load(stream)
        except yaml.YAMLError as exc:
            raise ValidationError(f"Error parsing YAML configuration {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValidationError(f"Configuration {path} must be a mapping, got {type(data).__name__}")
    return data


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``override`` into a copy of ``base``; mappings merge, everything else replaces."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    """
    Loads the default configuration from transfer_cli_config.yaml.
    Searches in the current working directory and then in the package directory.
    With ``path`` the file found there is merged on top of the defaults.
    """
    script_dir = os.path.dirname(__file__)
    cfg_paths_to_check = [
        os.path.join(os.getcwd(), CONFIG_FILE_NAME),  # Check CWD first
        os.path.join(script_dir, CONFIG_FILE_NAME),  # Fallback to package internal
    ]

    loaded_path = next((p for p in cfg_paths_to_check if os.path.exists(p)), None)
    if not loaded_path:
        raise FileNotFoundError(
            f"Configuration file '{CONFIG_FILE_NAME}' not found in "
            f"{[os.path.dirname(p) for p in cfg_paths_to_check]}"
        )
    config = _read_yaml(loaded_path)

    if path is not None:
        if not os.path.exists(path):
            raise FileNotFoundError(f"Configuration file '{path}' not found")
        config = deep_merge(config, _read_yaml(path))
    return config


# Defaults loaded once when the module is imported
settings = load_config()
