"""Ray-traced coverage analysis and RIS placement planning for urban cells."""

__version__ = "0.1.0"
