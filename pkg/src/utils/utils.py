"""Utilities for solver runs.

Provides the timing decorator and the artifact writers shared by the subcommands.
"""

# File: src/utils/utils.py
import json
import logging
import os
import timeit
from functools import wraps

import pandas as pd

logger = logging.getLogger(__name__)


def method_timer(method):
    """Decorator to measure and log execution time of a method.

    Args:
        method (callable): Method to time.

    Returns:
        callable: Wrapped method that returns result and execution time.
    """
    @wraps(method)
    def wrapper(*args, **kwargs):
        start_time = timeit.default_timer()
        result = method(*args, **kwargs)
        stop_time = timeit.default_timer()
        delta_time = stop_time - start_time
        logger.info(f"{method.__name__:15s}: {delta_time:.3f} secs")
        return result, delta_time
    return wrapper


def write_csv(frame, path):
    """Write a DataFrame without index; floats keep their shortest round-trip repr."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info(f"Saved {len(frame)} rows to: {os.path.abspath(path)}")
    return path


def read_csv(path):
    """Read an artifact back with exact float parsing."""
    return pd.read_csv(path, float_precision="round_trip")


def write_json(payload, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Saved JSON to: {os.path.abspath(path)}")
    return path


def write_jsonl(records, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True))
            f.write("\n")
    logger.info(f"Saved {len(records)} JSON lines to: {os.path.abspath(path)}")
    return path
