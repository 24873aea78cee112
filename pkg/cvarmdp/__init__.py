"""
cvarmdp - Exact mean-CVaR optimization for finite discounted MDPs
"""
__version__ = "1.0.0"
