"""Trial protocols and study runners."""
