# Quantum two-way time transfer toolkit
__all__ = ["cli", "core", "logic", "utils"]
