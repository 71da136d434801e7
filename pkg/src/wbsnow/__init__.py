"""Wet-bulb snowfall-regime analysis toolkit."""

__version__ = "0.1.0"
