"""The tape-based autodiff engine and its finite-difference verification.

Every layer in the package records closures onto a tape; backward() walks
it in reverse. The gradcheck suite compares each analytic gradient to a
central-difference estimate at 64-bit precision.
"""
import numpy as np

from floodfusion.autograd import Tensor
from floodfusion.gradcheck import run_suite
from floodfusion.layers import ConvParams, conv2d_reflect

# a scalar chain: y = sum(3x^2 + x), dy/dx = 6x + 1
x = Tensor(np.array([1.5, -0.5, 2.0]), requires_grad=True)
y = ((x * x) * 3.0 + x).sum()
y.backward()
print("dy/dx =", x.grad, "(expect 6x + 1 =", 6.0 * x.data + 1.0, ")")

# the same tape drives the conv layers used by the model
rng = np.random.default_rng(0)
img = Tensor(rng.standard_normal((1, 8, 8)), requires_grad=True)
p = ConvParams(Tensor(rng.standard_normal((1, 1, 3, 3)) * 0.3,
                      requires_grad=True),
               Tensor(np.zeros(1), requires_grad=True))
conv2d_reflect(img, p).sum().backward()
print(f"conv weight grad norm: {np.linalg.norm(p.weights.grad):.4f}")

# the full verification suite, one seed for speed (the tests use five)
print("\ngradcheck, h = 1e-5, tolerance 1e-4:")
for name, err, ok in run_suite(n_seeds=1):
    print(f"  {'PASS' if ok else 'FAIL'} {name:18s} max_rel_err={err:.2e}")
