"""Large-deviation toolkit for slow/fast jump-diffusions."""
__version__ = "0.1.0"
