"""Version module and init for scwm-reid."""

__version__ = "0.1.0"
