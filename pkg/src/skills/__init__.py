"""Movement primitives, covariance profiles and the skill repertoire."""
