"""
Readers and writers for the file formats the toolkit consumes and produces.
"""
