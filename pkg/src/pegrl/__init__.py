"""Contact-rich peg insertion with learned parallel position-force control."""

__version__ = "0.1.0"
