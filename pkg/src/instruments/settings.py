"""Machine-level solver defaults read from config/solver_config.ini."""

import configparser
import os

from src.operators.operator_matrix import DEFAULT_DENSE_LIMIT, Units

ROOT_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..'))
DEFAULT_INI = os.path.join(ROOT_DIR, 'config', 'solver_config.ini')


class SolverSettings:
    """Units, dense-size guard and directories from the [Settings] section."""

    def __init__(self, config_file=None):
        config = configparser.ConfigParser()
        config_file = config_file or DEFAULT_INI
        if not config.read(config_file):
            raise FileNotFoundError(f"Configuration file '{config_file}' not found.")
        if 'Settings' not in config:
            raise ValueError(f"Configuration file '{config_file}' is missing the 'Settings' section.")
        settings = config['Settings']
        self.config_file = config_file
        self.HBAR = settings.getfloat('HBAR', 1.0)
        self.MASS = settings.getfloat('MASS', 1.0)
        self.C = settings.getfloat('C', 1.0)
        self.DENSE_LIMIT = settings.getint('DENSE_LIMIT', DEFAULT_DENSE_LIMIT)
        self.LOG_DIR = self._resolve(settings.get('LOG_DIR', 'logs'))
        self.OUTPUT_DIR = self._resolve(settings.get('OUTPUT_DIR', 'output'))

    @staticmethod
    def _resolve(path):
        return path if os.path.isabs(path) else os.path.join(ROOT_DIR, path)

    def units(self, overrides=None):
        """Units with any run-config values taking precedence."""
        overrides = overrides or {}
        return Units(hbar=float(overrides.get('hbar', self.HBAR)),
                     mass=float(overrides.get('mass', self.MASS)),
                     c=float(overrides.get('c', self.C)))
