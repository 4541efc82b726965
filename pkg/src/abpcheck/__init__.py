"""Numerical checks of ABP-method Sobolev and Michael-Simon inequalities on model manifolds."""
