"""
Fundus photograph normalization
===============================

Crop the field of view, resize to 299 x 299 and flatten the luminance
background while leaving chrominance untouched. A synthetic photograph
with uneven illumination stands in for a real one.
"""

import numpy as np
from scipy.ndimage import gaussian_filter

from raredetect import preprocess_fundus
from raredetect.preprocess import rgb_to_ycrcb

h, w = 480, 640
yy, xx = np.mgrid[:h, :w]
disk = (yy - 240) ** 2 + (xx - 330) ** 2 <= 200**2
illumination = 0.6 + 0.4 * np.exp(-((xx - 250) ** 2 + (yy - 200) ** 2) / 2e4)
img = np.zeros((h, w, 3))
img[disk] = np.array([180.0, 90.0, 40.0]) * illumination[disk][:, None]
# a few dark "vessels"
for x0 in (280, 330, 380):
    img[disk & (np.abs(xx - x0 - 0.2 * (yy - 240)) < 3)] *= 0.5
img = img.astype(np.uint8)

out = preprocess_fundus(img)
print("output shape:", out.shape)


# the slowly varying part of the luminance is what the correction removes;
# compare it over matching central windows of the disk
def smooth_range(window):
    y = gaussian_filter(rgb_to_ycrcb(window)[..., 0].astype(float), 15)
    return y.max() - y.min()


print(f"smooth luminance range, input:  {smooth_range(img[140:340, 230:430]):.1f}")
print(f"smooth luminance range, output: {smooth_range(out[100:200, 100:200]):.1f}")
