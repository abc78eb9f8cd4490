"""Tests for adverseg."""
