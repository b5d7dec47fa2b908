"""Integration tests for SurveyAlloc"""
