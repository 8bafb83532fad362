"""Points-gained analytics for charted volleyball contact logs."""

__version__ = "0.1.0"
