"""Temporal layer primitives and their hand-written backward passes."""

# %%
import numpy as np

from fcsn import numcore as nc

rng = np.random.default_rng(0)

# A sequence map is a (channels, length) array.  A 3-tap difference filter:
spec = nc.ConvSpec(1, 1, kernel=3, padding=1)
w = np.array([[[1.0, 0.0, -1.0]]])
print("conv  ", nc.conv1d_forward(np.array([[1.0, 2, 3, 4]]), w, np.zeros(1), spec))

# Transposed convolution runs the same weights the other way: k=2, s=2 repeats frames.
up = nc.ConvSpec(1, 1, kernel=2, stride=2)
print("tconv ", nc.tconv1d_forward(np.array([[5.0, 7.0]]), np.ones((1, 1, 2)), np.zeros(1), up))

# %%
# tconv is the adjoint of conv: <conv x, g> == <x, tconv g>.
spec = nc.ConvSpec(2, 3, kernel=4, stride=2, padding=1)
w = rng.normal(size=spec.weight_shape)
g = rng.normal(size=(3, 6))
x = rng.normal(size=(2, spec.transposed_out_length(6)))
lhs = (nc.conv1d_forward(x, w, np.zeros(3), spec) * g).sum()
rhs = (x * nc.tconv1d_forward(g, w, np.zeros(2), spec)).sum()
print(f"adjoint gap {abs(lhs - rhs):.2e}")

# %%
# Pooling keeps the argmax so the gradient can be routed back.
y, idx = nc.maxpool1d_forward(np.array([[1.0, 3, 2, 4]]), 2, 2)
print("pool  ", y, idx, nc.maxpool1d_backward(idx, np.ones_like(y), 4))

# Batch norm in train mode normalises over every video and frame of the batch.
ys, cache = nc.batchnorm1d([np.array([[1.0, 3.0]])], np.ones(1), np.zeros(1), "train", None, None, eps=0.0)
print("bn    ", ys[0])

# %%
# Finite differences against the analytic conv gradient.
spec = nc.ConvSpec(2, 3, kernel=3, stride=2, padding=2, dilation=2)
x, w, b = rng.normal(size=(2, 13)), rng.normal(size=spec.weight_shape), rng.normal(size=3)
r = rng.normal(size=(3, spec.out_length(13)))
gx, gw, gb = nc.conv1d_backward(x, w, spec, r)
report = nc.gradcheck(lambda: float((nc.conv1d_forward(x, w, b, spec) * r).sum()),
                      {"x": x, "w": w, "b": b}, {"x": gx, "w": gw, "b": gb})
print("\n".join(report.lines()))
