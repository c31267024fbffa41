"""Exact reference values frozen into the unit tests (rational arithmetic)."""
from fractions import Fraction as F
from math import comb


def basis(n, k, l, u, x):
    return comb(n, k) * (x - l) ** k * (u - x) ** (n - k) / (u - l) ** n


def power_to_bernstein(a, l, u):
    # Coefficients of sum a_i x^i on [l, u] by exact re-expansion in t.
    n = len(a) - 1
    w = u - l
    # p(l + w t) as a power series in t.
    shifted = [F(0)] * (n + 1)
    for i, ai in enumerate(a):
        for j in range(i + 1):
            shifted[j] += ai * comb(i, j) * l ** (i - j) * w ** j
    return [sum(F(comb(k, j), comb(n, j)) * shifted[j] for j in range(k + 1)) for k in range(n + 1)]


def restrict(c, t0, t1):
    def split(c, t):
        rows = [list(c)]
        while len(rows[-1]) > 1:
            r = rows[-1]
            rows.append([(1 - t) * r[j] + t * r[j + 1] for j in range(len(r) - 1)])
        left = [row[0] for row in rows]
        right = [rows[len(c) - 1 - j][j] for j in range(len(c))]
        return left, right

    _, right = split(c, t0)
    left, _ = split(right, (t1 - t0) / (1 - t0))
    return left


if __name__ == "__main__":
    print("basis_eval(3,1,[0,1],1/2) =", basis(3, 1, F(0), F(1), F(1, 2)))
    c = power_to_bernstein([F(1), F(-1), F(1), F(1)], F(0), F(1))
    print("bernstein of x^3+x^2-x+1 on [0,1] =", c)
    x = F(1, 2)
    print("p(1/2) =", 1 - x + x**2 + x**3, " p'(1/2) =", 3 * x**2 + 2 * x - 1)
    r = restrict(c, F(3, 5), F(4, 5))
    print("restricted to [0.6,0.8] =", r, [float(v) for v in r])
    d = power_to_bernstein([F(1), F(-1), F(1), F(1)], F(-1), F(2))
    print("bernstein on [-1,2] =", d, [float(v) for v in d])
    print("W=[[1,-1]] over [0,1]^2 corners:", sorted(a - b for a in (0, 1) for b in (0, 1)))
