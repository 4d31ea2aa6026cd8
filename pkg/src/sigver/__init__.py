"""Offline signature verification toolkit.

Subpackages and modules:

* ``sigver.ndgrad``   -- small reverse-mode autodiff engine on numpy arrays
* ``sigver.imageprep``-- grayscale normalization pipeline for signature images
* ``sigver.network``  -- two-branch global/regional embedding network
* ``sigver.tupletloss``-- co-tuplet and triplet metric losses, batch assembly
* ``sigver.verifier`` -- distance thresholding, pair protocols, EER/AUC metrics
* ``sigver.synth``    -- synthetic signature generator for desk-scale runs
* ``sigver.cli``      -- command line entry points (synth/preprocess/train/eval/gradcheck)
"""

__version__ = "0.1.0"
