"""
Convolution and pooling kernels
===============================

Valid cross-correlation and max pooling on channel-major arrays, and what
"shift equivariance" means in practice.
"""

import numpy as np

from ipost.tensor import conv2d_valid, maxpool2d

# a 1-channel 6x6 image with a single bright pixel
img = np.zeros((1, 6, 6))
img[0, 2, 2] = 1.0

# a 3x3 kernel that responds to the pixel and its right neighbour
kernel = np.zeros((1, 1, 3, 3))
kernel[0, 0, 1, 1] = 1.0
kernel[0, 0, 1, 2] = 0.5

out = conv2d_valid(img, kernel, np.zeros(1))
print("feature map (4x4):")
print(out[0])

# move the pixel one step right: the feature map moves with it
moved = np.roll(img, 1, axis=2)
print("after shifting the input right by one:")
print(conv2d_valid(moved, kernel, np.zeros(1))[0])

# max pooling keeps the largest value per window and remembers where it was
pooled, argmax = maxpool2d(out, 2, 2)
print("pooled:", pooled[0].tolist())
print("flat argmax into the 1x4x4 input:", argmax[0].tolist())

# ties resolve to the first position in row-major order
_, idx = maxpool2d(np.ones((1, 2, 2)), 2, 2)
print("argmax of a constant window:", int(idx[0, 0, 0]))
