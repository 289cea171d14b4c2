"""
Data reconstruction risk toolkit
"""
__version__ = "0.3.0"
