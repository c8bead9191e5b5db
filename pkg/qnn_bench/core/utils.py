import json
import logging
import os
from importlib import resources
from typing import Any, Dict, List

import jsonschema
import yaml

try:
    from yaml import CLoader as Loader
except ImportError:
    from yaml import Loader

from ..models import DataNotFoundError
from .config import config


def configure_logging(log_level: str = config.LOG_LEVEL):
    logging.basicConfig(
        level=getattr(logging, log_level),
        format='%(asctime)s %(levelname)-6s %(message)s',
        datefmt='%H:%M:%S',
    )


def ensure_dir(path: str) -> str:
    if not os.path.exists(path):
        os.makedirs(path)
    return path


def load_yaml_file(file_path: str) -> Dict[str, Any]:
    try:
        with open(file_path, 'r') as f:
            return yaml.load(f, Loader=Loader)
    except FileNotFoundError:
        logging.error(f'Could not find file at {file_path}.')
        raise DataNotFoundError(f'Failed to load yaml file: {file_path}')


def load_json_lines(file_path: str) -> List[Dict[str, Any]]:
    try:
        with open(file_path, 'r') as f:
            return [json.loads(line) for line in f if line.strip()]
    except FileNotFoundError:
        logging.error(f'Could not find file at {file_path}.')
        raise DataNotFoundError(f'Failed to load json lines file: {file_path}')


def load_grid_schema() -> Dict[str, Any]:
    schema_text = resources.files('qnn_bench.schemas').joinpath('grid_schema.json').read_text()
    return json.loads(schema_text)


def log_validation_error(error: jsonschema.ValidationError, offset=''):
    for error_context in sorted(error.context, key=lambda e: e.schema_path):
        log_validation_error(error_context, offset=offset + '  ')
    path = '.'.join([str(p) for p in error.absolute_path])
    logging.error(f'{offset}Error in grid at {path or "<root>"}: {error.message}')
