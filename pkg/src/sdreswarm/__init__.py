"""SDRE broadcast control of underactuated holonomic robot swarms."""
__version__ = "0.1.0"
