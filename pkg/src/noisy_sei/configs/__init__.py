"""Shipped YAML configs: ``desk`` and ``fullscale``."""
