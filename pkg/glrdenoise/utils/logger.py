import logging
import os
import sys
import toon
from datetime import datetime, timezone

import numpy as np

from ..config import LOG_LEVEL_ENV

# Token economy limits
MAX_STR_LENGTH = 1000
MAX_LIST_SAMPLE = 5


class ToonFormatter(logging.Formatter):
    """
    TOON formatter for pipeline logs:
    - TOON encoding (Token-Oriented Object Notation)
    - Token economy (truncation, None removal, list sampling)
    - ISO timestamps
    """

    STANDARD_KEYS = frozenset([
        'args', 'asctime', 'created', 'exc_info', 'exc_text', 'filename',
        'funcName', 'levelname', 'levelno', 'lineno', 'module', 'msecs',
        'message', 'msg', 'name', 'pathname', 'process', 'processName',
        'relativeCreated', 'stack_info', 'thread', 'threadName', 'timestamp',
        'taskName',
    ])

    def format(self, record):
        record_dict = {
            "timestamp": datetime.fromtimestamp(record.created, tz=timezone.utc).strftime('%Y-%m-%dT%H:%M:%S.%fZ'),
            "level": record.levelname,
            "name": record.name,
            "message": record.getMessage()
        }

        # Extra fields (passed in extra={...})
        for key, value in record.__dict__.items():
            if key not in self.STANDARD_KEYS and not key.startswith('_'):
                record_dict[key] = _plain(value)

        if record.exc_info:
            if not record.exc_text:
                record.exc_text = self.formatException(record.exc_info)
            record_dict['exception'] = record.exc_text

        self._economize_tokens(record_dict)

        try:
            return toon.encode(record_dict) + '\n'
        except Exception:
            return str(record_dict) + '\n'

    def _economize_tokens(self, data):
        """
        Recursively traverse the dict to:
        1. Remove None values
        2. Truncate long strings
        3. Sample large lists
        """
        keys_to_remove = []

        for key, value in data.items():
            if value is None:
                keys_to_remove.append(key)
                continue

            if isinstance(value, str):
                if len(value) > MAX_STR_LENGTH:
                    data[key] = value[:MAX_STR_LENGTH] + f" ... (truncated {len(value)-MAX_STR_LENGTH} chars)"

            elif isinstance(value, list):
                if len(value) > MAX_LIST_SAMPLE:
                    data[key] = {
                        "total_count": len(value),
                        "sample": value[:MAX_LIST_SAMPLE],
                        "note": "List truncated for token economy"
                    }

            elif isinstance(value, dict):
                self._economize_tokens(value)

        for k in keys_to_remove:
            data.pop(k)


def _plain(value):
    """Converts numpy scalars and arrays into plain Python values for encoding."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def get_logger(name, level=None):
    """
    Returns a configured logger instance writing TOON records to stderr.
    """
    logger = logging.getLogger(name)

    # Avoid duplicate handlers
    if logger.handlers:
        return logger

    if level is None:
        level = os.getenv(LOG_LEVEL_ENV, 'INFO').upper()
    logger.setLevel(level)

    # Stderr keeps stdout free for data output
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(ToonFormatter())
    logger.addHandler(handler)
    logger.propagate = False

    return logger


def set_level(level):
    """Applies a level to every package logger created so far."""
    for name, logger in logging.Logger.manager.loggerDict.items():
        if name.startswith('glrdenoise') and isinstance(logger, logging.Logger):
            logger.setLevel(level)


def slog(logger_instance, level, message, component, operation=None, **context):
    """
    Structured log helper.

    Every entry gets a `component` tag for filtering. Additional context fields are
    passed as structured data via TOON.

    Usage:
        slog(logger, 'info', 'Patch graph built', component='graph',
             operation='build_patch_graph', edges=812, epsilon=0.013)

    Output (TOON):
        level: INFO
        name: glrdenoise.graph
        message: Patch graph built
        component: graph
        operation: build_patch_graph
        edges: 812
        epsilon: 0.013
    """
    extra = {"component": component}
    if operation:
        extra["operation"] = operation
    extra.update(context)

    log_method = getattr(logger_instance, level.lower(), logger_instance.info)
    log_method(message, extra=extra)


def log_diagnostic(logger_instance, message, component, operation,
                   error=None, hint=None, expected=None, actual=None, **context):
    """
    Diagnostic packet: structured context (expected vs actual, hint) so a failure can
    be understood from the logs alone.

    Usage:
        log_diagnostic(logger, "PCG stopped before reaching tolerance",
            component="solver", operation="solve_coordinate",
            expected="relative residual <= 1e-08",
            actual="relative residual 3.2e-06 after 1000 iterations",
            hint="Raise pcg_max_iters or check the system conditioning")
    """
    extra = {
        "component": component,
        "operation": operation,
    }

    if hint:
        extra["hint"] = hint
    if expected:
        extra["expected"] = expected
    if actual:
        extra["actual"] = actual

    extra.update(context)

    if error:
        extra["error_type"] = type(error).__name__
        extra["error_message"] = str(error)
        logger_instance.error(message, extra=extra, exc_info=True)
    else:
        logger_instance.warning(message, extra=extra)
