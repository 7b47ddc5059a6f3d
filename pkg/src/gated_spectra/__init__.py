"""Spectra of gated recurrent network Jacobians."""
