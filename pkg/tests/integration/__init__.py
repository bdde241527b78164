"""
Integration test package
""" 