"""Train a tiny two-module C3 network to segment noisy rectangles."""
import numpy as np

from c3conv import graph_forward
from c3conv.toy import build_toy_net, make_rectangles, train_toy

# %% 8 noisy 32x32 images, label 1 inside a rectangle
images, labels = make_rectangles(8, seed=0)
print("foreground fraction:", labels.mean().round(3))

# %% full-batch gradient descent, loss printed every 25 steps
result = train_toy(steps=200, seed=0, callback=lambda s, loss: s % 25 or print(f"step {s:3d}  loss {loss:.4f}"))

# %% pixel accuracy of the trained weights
g = build_toy_net(0)
pred = graph_forward(g, images, result.params).argmax(axis=1)
print(f"pixel accuracy {np.mean(pred == labels):.3f}")
