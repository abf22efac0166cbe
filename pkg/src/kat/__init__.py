"""Knowledge-augmented training for data-scarce market modeling.

The pipeline: calibrate classical models against a small historical dataset,
synthesize knowledge-based augmentation data from the calibrated ensemble,
train small networks with a dynamic-sampling mini-batch curriculum, and
quantify the effect with gradient-noise and manifold-error diagnostics.
"""

__version__ = "0.1.0"
