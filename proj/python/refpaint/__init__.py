"""Reference-guided image inpainting."""

from ._refpaint import (
    Model,
    classify_bucket,
    detect_keypoints,
    gradcheck,
    gradcheck_components,
    hole_ratio,
    mine_pairs,
    psnr,
    rtv_smooth,
    ssim,
)

__all__ = [
    "Model",
    "classify_bucket",
    "detect_keypoints",
    "gradcheck",
    "gradcheck_components",
    "hole_ratio",
    "mine_pairs",
    "psnr",
    "rtv_smooth",
    "ssim",
]
