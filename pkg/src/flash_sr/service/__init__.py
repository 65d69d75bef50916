"""HTTP service exposing the file-level operations."""
