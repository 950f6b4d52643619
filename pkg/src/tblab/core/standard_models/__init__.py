"""Models, envelopes and table schemas shared across tblab."""
