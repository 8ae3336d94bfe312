"""Single-image SVBRDF capture: differentiable renderer, autodiff U-Net with a
global-features track, procedural training data and a CPU training loop."""

__version__ = "0.1.0"
