"""High-level MiLa policy: encoder, task-parameter heads and executor."""
