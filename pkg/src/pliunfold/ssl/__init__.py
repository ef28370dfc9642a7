"""Self-supervised contrastive texture features."""
