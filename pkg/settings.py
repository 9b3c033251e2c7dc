"""
Environment configuration and logging setup shared by the CLI and the API
"""

import logging
import os
from logging.handlers import RotatingFileHandler

from dotenv import load_dotenv

load_dotenv()

LOG_FORMAT = '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'


def _int_env(name, default):
    value = os.getenv(name)
    if value is None or value.strip() == "":
        return default
    try:
        return int(value)
    except ValueError:
        logging.getLogger(__name__).warning(f"{name}={value!r} is not an integer; using {default}")
        return default


LOG_DIR = os.getenv('RELAY_LP_LOG_DIR', 'logs')
LOG_LEVEL = os.getenv('RELAY_LP_LOG_LEVEL', 'INFO').upper()
DEFAULT_SEED = _int_env('RELAY_LP_SEED', 0)
DEFAULT_JOBS = _int_env('RELAY_LP_JOBS', 1)
API_MAX_FRAMES = _int_env('RELAY_LP_API_MAX_FRAMES', 200)


def configure_logging(logger=None, log_name='relay_lp.log'):
    """Attach a rotating file handler (console if the log dir is unwritable) once"""
    logger = logger or logging.getLogger()
    level = getattr(logging, LOG_LEVEL, logging.INFO)
    if getattr(logger, '_relay_lp_configured', False):
        return logger

    if not os.path.exists(LOG_DIR):
        try:
            os.makedirs(LOG_DIR)
        except (OSError, PermissionError):
            pass

    try:
        handler = RotatingFileHandler(os.path.join(LOG_DIR, log_name), maxBytes=10240000, backupCount=10)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
    except (OSError, PermissionError):
        handler = logging.StreamHandler()
    handler.setLevel(level)
    logger.addHandler(handler)
    logger.setLevel(level)
    logger._relay_lp_configured = True
    return logger
