"""
Services module for SurveyAlloc
Allocation, selection, frame preparation and evaluation algorithms
"""
