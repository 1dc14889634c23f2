"""Link-level simulator for scalable multi-task semantic communication."""

__version__ = "0.1.0"
