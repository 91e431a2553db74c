"""Tests for phrase_mmt package."""
