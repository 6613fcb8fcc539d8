"""Hourly temperature imputation from daily min/max records using nearby hourly stations."""

__version__ = "0.1.0"
