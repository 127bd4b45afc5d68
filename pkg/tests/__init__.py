"""Tests for the seld_einv2 package."""
