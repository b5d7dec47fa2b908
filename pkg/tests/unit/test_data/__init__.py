"""Input loading and validation tests"""
