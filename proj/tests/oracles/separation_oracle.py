"""LP oracle for separation: max sum(Z theta) s.t. Z theta >= 0, |theta|_inf <= 1."""
import numpy as np
from scipy.optimize import linprog


def lp_value(x, y):
    X = np.column_stack([np.ones(len(x)), x])
    Z = (2 * np.asarray(y) - 1)[:, None] * X
    res = linprog(-Z.sum(axis=0), A_ub=-Z, b_ub=np.zeros(len(y)), bounds=[(-1, 1)] * X.shape[1], method="highs")
    return -res.fun


cases = {
    "interleaved": ([-3, -2, -1, 1, 2, 3], [0, 1, 0, 1, 0, 1]),
    "split": ([-3, -2, -1, 1, 2, 3], [0, 0, 0, 1, 1, 1]),
    "quasi": ([-1, 0, 0, 1], [0, 0, 1, 1]),
    "constant": ([0.3, -1.2, 2.0], [1, 1, 1]),
}
for k, (x, y) in cases.items():
    print(k, repr(lp_value(x, y)))
