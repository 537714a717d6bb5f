"""Feature packs, manifests, synthetic data and batching."""
