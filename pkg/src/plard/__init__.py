"""Camera-LiDAR road detection with altitude-difference images and feature-space adaptation.

Modules:

- ``lidar_io``: point-cloud and calibration I/O, projection to pixels
- ``adt``: altitude rasterisation, altitude-difference transform, projection baseline
- ``autodiff``: small reverse-mode tensor engine, SGD, checkpoints, gradient check
- ``model``: two-stream network with feature-space adaptation and its loss
- ``pipeline``: sample preparation, training, prediction, evaluation
- ``evalkit``: MaxF / AP / PRE / REC / FPR / FNR and birds-eye-view warping
- ``synthscene``: ray-cast synthetic scenes with matching image, cloud and labels
- ``ablation``: the four-variant comparison
- ``cli``: the ``plard`` command
"""

__version__ = "0.1.0"
