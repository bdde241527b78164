"""
Core functionality test package
""" 