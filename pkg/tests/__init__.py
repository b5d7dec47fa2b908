"""SurveyAlloc test suite"""
