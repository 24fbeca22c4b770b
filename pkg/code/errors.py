from __future__ import annotations


class BenchError(Exception):
    exit_code = 1


class ConfigError(BenchError):
    exit_code = 2


class DataError(BenchError):
    exit_code = 3


class NumericError(BenchError):
    exit_code = 4
