"""Tests for fuplab."""
