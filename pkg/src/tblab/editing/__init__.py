"""Editing objectives, adversarial samples and the per-edit optimisation loop."""
