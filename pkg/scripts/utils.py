import logging
import os
import sys


def setup_logging(name, log_level=None):
    """
    Sets up a logger with a consistent format.
    Outputs to console; level comes from LOG_LEVEL unless given.
    """
    if log_level is None:
        log_level = os.getenv("LOG_LEVEL", "INFO").upper()

    logger = logging.getLogger(name)
    logger.setLevel(log_level)

    # Check if handlers already exist to avoid duplicate logs
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stdout)
        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )
        handler.setFormatter(formatter)
        logger.addHandler(handler)

    return logger


def ensure_dir(path):
    """Ensures a directory exists."""
    if not os.path.exists(path):
        try:
            os.makedirs(path)
        except OSError:
            # Re-raise if it's not "File exists"
            if not os.path.isdir(path):
                raise


def format_float(value):
    """Full-precision decimal text for CSV and report output."""
    return "%.17g" % value


class PipelineError(Exception):
    """Base error; exit_code is what the CLI returns."""
    exit_code = 2


class ConfigError(PipelineError):
    exit_code = 1


class DataError(PipelineError):
    exit_code = 2
