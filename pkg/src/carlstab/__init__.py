"""carlstab: staggered-grid semi-discrete parabolic operators, Carleman-weighted
estimate verification, and inverse source stability experiments on the unit box."""

__version__ = "0.1.0"
