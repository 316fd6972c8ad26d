"""Visual-transformation self-supervision experiments."""

__version__ = "0.1.0"
