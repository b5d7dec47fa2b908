"""Unit tests for SurveyAlloc components"""
