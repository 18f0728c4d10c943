"""Dynamic equations on time scales and delayed SICNN models."""
