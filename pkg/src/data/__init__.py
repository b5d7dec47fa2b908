"""
Input loading and coherence checks
"""
