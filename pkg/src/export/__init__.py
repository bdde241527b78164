"""
Output artifacts: JSON metric reports and bird's-eye-view figures.
"""
