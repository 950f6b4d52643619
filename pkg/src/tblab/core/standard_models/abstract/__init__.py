"""Abstract models and errors inherited by the rest of tblab."""
