"""Tests for utility modules"""
