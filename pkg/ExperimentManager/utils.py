import json
import logging
from pathlib import Path

from django.core.management import CommandError

from .exceptions import BalanceError, ConfigError, DimensionError, DomainError, ExperimentError, MetricUnavailableError, SchemaError

logger = logging.getLogger('experiment_logger')

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ALL_FAILED = 4


def load_config_file(path):
    """Read an experiment config JSON file into a dict."""
    try:
        with open(path) as handle:
            data = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f'config file {path} does not exist')
    except json.JSONDecodeError as e:
        raise ConfigError(f'config file {path} is not valid JSON: {e}')
    if not isinstance(data, dict):
        raise ConfigError(f'config file {path} must hold a JSON object')
    return data


def dump_json(payload):
    # Sorted keys and repr floats keep reruns byte-identical.
    return json.dumps(payload, sort_keys=True, indent=2) + '\n'


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(payload))
    return path


def write_frame(path, frame, header_lines=()):
    """CSV with '#' header lines and round-trip float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as handle:
        for line in header_lines:
            handle.write(f'# {line}\n')
        frame.to_csv(handle, index=False, float_format='%.17g')
    return path


def reproducibility_header(config, seed):
    """Comment lines prepended to every CSV output."""
    if hasattr(config, 'to_dict'):
        config = config.to_dict()
    return [f'config: {json.dumps(config, sort_keys=True)}', f'seed: {seed}']


def exit_code_for(error):
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, (SchemaError, BalanceError, MetricUnavailableError, DomainError, DimensionError)):
        return EXIT_DATA
    if isinstance(error, ExperimentError):
        return EXIT_ALL_FAILED
    return 1


def command_error(error):
    """CommandError carrying the exit code of an experiment error."""
    logger.error(f'{type(error).__name__}: {error}')
    return CommandError(str(error), returncode=exit_code_for(error))
