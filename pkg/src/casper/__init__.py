"""DAG structure learning in a DAG-ness-aware critic space."""
__version__ = "0.1.0"
