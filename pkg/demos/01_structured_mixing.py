# coding: utf-8

# # Two cheap operators

# The encoder never forms a dense d x d matrix or an L x L attention map. It mixes features with a Monarch
# matrix and mixes positions with a long convolution computed through the FFT. This demo checks both against
# their slow counterparts and counts the work.

# In[1]:

import numpy as np

from m2lab import numeric as nm
from m2lab.monarch import monarch_apply, monarch_dense, monarch_init

rng = np.random.default_rng(0)


# A Monarch matrix with b blocks acts on vectors of size n = b * b. Its dense form is P^T BD(L) P BD(R), where
# BD builds a block-diagonal matrix and P transposes the b x b grid.

# In[2]:

M = monarch_init(8, scale=1.0, rng=rng)
x = rng.standard_normal(64)
fast = monarch_apply(M, x).values
slow = monarch_dense(M).values @ x
print("max abs difference:", np.abs(fast - slow).max())


# The fast path only touches the two block stacks, so it costs 2 b^3 multiplications against n^2 = b^4 for
# the dense product.

# In[3]:

for b in (4, 8, 16, 32):
    nm.reset_multiplication_count()
    monarch_apply(monarch_init(b, rng=rng), rng.standard_normal(b * b))
    print(f"n={b * b:5d}  monarch={nm.multiplication_count():8d}  dense={b ** 4:10d}")


# # Long convolution

# Circular convolution by FFT agrees with the quadratic loop to rounding error.

# In[4]:

u, k = rng.standard_normal(64), rng.standard_normal(64)
print("max abs difference:", np.abs(nm.circular_conv_fft(u, k).values - nm.circular_conv_direct(u, k)).max())


# Both operators are differentiable. grad_check compares backprop against central differences.

# In[5]:

u_param = nm.DiffArray(u, trainable=True)
k_param = nm.DiffArray(k, trainable=True)
err = nm.grad_check(lambda: nm.total(nm.square(nm.circular_conv_fft(u_param, k_param))), [u_param, k_param])
print("relative gradient error:", err)
