"""Command line front end for SurveyAlloc"""
