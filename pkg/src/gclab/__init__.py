"""gclab: structure-guided image completion lab.

Synthetic panoptic scenes, hole-mask generation, guidance encodings
(edge / semantic / panoptic), a conditional completion generator with
image-level and object-level discriminators, training, evaluation
metrics (FID, U-IDS/P-IDS), an automatic inpainting pipeline, and an
HTTP inference service.
"""

__version__ = "0.1.0"
