"""Audio-driven talking-portrait pipeline.

Three trainable stages: a dual-attention motion generator (audio to
mouth/eye/pose/torso displacement streams), a facial composer (sparse
points to dense landmarks), and a temporally-guided frame renderer; plus
the preprocessing that builds training data and the evaluation metrics.
"""

__version__ = "0.1.0"
