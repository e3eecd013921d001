"""Role-based multiagent team decision problems: evaluation and allocation search."""
__version__ = "0.1.0"
