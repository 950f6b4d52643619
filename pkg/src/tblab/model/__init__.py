"""The subject model: configuration, parameters, forward/backward and base training."""
