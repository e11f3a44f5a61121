"""
Reverse-mode gradients and finite differences
=============================================

Build a small expression, backpropagate through it and compare the
analytic gradient against central differences.
"""

import numpy as np

from viper import autodiff as ad
from viper import checks
from viper.autodiff import Tensor

# a leaf that wants a gradient
x = Tensor(np.array([[0.5, -1.0, 2.0], [1.5, 0.0, -0.5]]), requires_grad=True)
w = Tensor(np.random.default_rng(0).standard_normal((3, 4)))

# a row softmax over a linear map, reduced to a scalar
out = ad.tsum(ad.mul(ad.softmax_rows(ad.matmul(x, w)), Tensor(np.arange(8.0).reshape(2, 4))))
ad.backward(out)
print("loss", out.item())
print("d loss / d x\n", x.grad)

# the same gradient from central differences
report = ad.gradcheck(
    lambda t: ad.tsum(ad.mul(ad.softmax_rows(ad.matmul(t, w)), Tensor(np.arange(8.0).reshape(2, 4)))),
    x.data,
)
print("max relative error", report.max_rel_error)

# grad() leaves the graph intact; backward() consumes it
y = Tensor(3.0, requires_grad=True)
z = ad.mul(y, y)
print("dz/dy twice:", ad.grad(z, [y])[0], ad.grad(z, [y])[0])

# the packaged suite checks every differentiable operation over many seeds
suite = checks.run_suite(seeds=5)
for line in suite.lines()[:6]:
    print(line)
print("...", len(suite.lines()), "operations, all passed:", suite.passed)
