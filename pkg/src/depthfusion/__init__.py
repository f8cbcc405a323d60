"""depthfusion: monocular depth estimation with multi-scale and dilated
convolutional feature fusion, trained and evaluated on synthetic scenes.
"""

__version__ = "0.1.0"
