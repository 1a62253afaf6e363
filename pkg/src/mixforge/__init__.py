"""mixforge: two-stage boosted-tree pipeline for UHPC mixture properties."""

__version__ = "0.1.0"
