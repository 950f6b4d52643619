"""tblab test suite."""
