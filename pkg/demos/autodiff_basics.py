"""
Gradients from the tensor engine
================================

"""

import numpy as np

from adaembed import Tensor, backward
from adaembed import autodiff as ad

# a tiny cosine classifier: normalize features, score against two prototypes
rng = np.random.default_rng(0)
f = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
W = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
logits = ad.matmul(ad.l2_normalize(f), W) * 20.0
loss = ad.cross_entropy(logits, [0, 1, 1, 0])
backward(loss)
print("loss", loss.item())
print("dL/dW\n", W.grad)

# the same gradient by central differences
def objective(f_data, w_data):
    return ad.cross_entropy(ad.matmul(ad.l2_normalize(Tensor(f_data)), Tensor(w_data)) * 20.0, [0, 1, 1, 0]).item()

numeric = ad.numerical_gradient(objective, [f.data, W.data])
print("relative error f:", ad.relative_error(f.grad, numeric[0]))
print("relative error W:", ad.relative_error(W.grad, numeric[1]))

# gradient reversal is the identity going forward and flips the sign going back
x = Tensor(np.ones((1, 2)), requires_grad=True)
backward((ad.gradient_reversal(x) * 3.0).sum())
print("reversed grad", x.grad)
