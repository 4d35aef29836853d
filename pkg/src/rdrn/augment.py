"""The eight dihedral transforms of an image, shared by training-time
augmentation and the geometric self-ensemble.

Index k encodes rot90 applied k mod 4 times, preceded by a horizontal
flip when k >= 4. All transforms are pure permutations, so a transform
followed by its inverse restores the array bitwise.
"""

import numpy as np

N_TRANSFORMS = 8


def dihedral_transform(img, k):
    if not 0 <= k < N_TRANSFORMS:
        raise ValueError(f"transform index must be in 0..7, got {k}")
    out = img[:, ::-1] if k >= 4 else img
    return np.ascontiguousarray(np.rot90(out, k % 4))


def dihedral_inverse(img, k):
    if not 0 <= k < N_TRANSFORMS:
        raise ValueError(f"transform index must be in 0..7, got {k}")
    out = np.rot90(img, -(k % 4))
    if k >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def random_dihedral_pair(hr_patch, lr_patch, rng):
    """Apply one random transform identically to an HR/LR patch pair."""
    k = int(rng.integers(N_TRANSFORMS))
    return dihedral_transform(hr_patch, k), dihedral_transform(lr_patch, k)
