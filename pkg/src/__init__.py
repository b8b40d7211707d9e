"""
crlearn - active learning of cross-resonance Hamiltonians
"""
__version__ = "0.3.0"
