"""malgraph: dependency-graph malware detection on IR instruction traces."""

__version__ = "0.1.0"
