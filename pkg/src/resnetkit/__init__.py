"""resnetkit: build, analyze, and train residual network families at desk scale."""

__version__ = "0.1.0"
