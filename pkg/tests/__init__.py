"""Unit test package for balanced_pod_tools."""
