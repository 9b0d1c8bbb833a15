"""Planar reach-place-push simulator, scripted expert and disturbance injectors."""
