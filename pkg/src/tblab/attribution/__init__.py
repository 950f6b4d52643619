"""Token attribution: Distance scores, key-token paths, modality ratios and masking sweeps."""
