"""Tests for sdebounds."""
