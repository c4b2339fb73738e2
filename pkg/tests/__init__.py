"""
Tests package for UniEdit.
"""
