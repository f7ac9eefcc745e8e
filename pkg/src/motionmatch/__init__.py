"""Motion-matching animation engine: BVH import, pose/feature databases,
weighted nearest-neighbor pose search, inertialized blending and VR avatar
synthesis with a trainable body-orientation predictor."""

__version__ = "0.1.0"
