"""High-precision reference values for d^k log Phi(x)/dx^k (k = 0..3).

Computed with mpmath at 60 digits, independent of the C++ implementation.
The output is pasted into tests/zeta_reference.hpp.
"""
import mpmath as mp

mp.mp.dps = 60


def log_ncdf(x):
    return mp.log(mp.ncdf(x))


def zeta(k, x):
    x = mp.mpf(x)
    if k == 0:
        return log_ncdf(x)
    return mp.diff(log_ncdf, x, k)


points = ["0", "1", "-1", "2.5", "-2.5", "5", "-5", "8", "-8", "-12.5",
          "-20", "-30", "-100", "-350", "-700"]
for x in points:
    vals = [mp.nstr(zeta(k, x), 20) for k in range(4)]
    print("    {%s, {%s}}," % (x, ", ".join(vals)))
