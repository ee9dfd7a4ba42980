"""City-scale pedestrian evacuation to open spaces after an earthquake."""

__version__ = "0.1.0"
