"""Frozen oracle values.

Each constant was computed once, independently of the package, with mpmath at
30 significant digits.  The expression is given next to every entry.
"""

# int_0^1 (cos r - 1) d(sin r) = 1/2 + sin(2)/4 - sin(1): second level of the circle t -> (cos t, sin t)
CIRCLE_AREA_12 = -0.114146628101476082803497355152

# E cos(Z) for Z ~ N(0, 1) = exp(-1/2)
HEAT_U00 = 0.606530659712633423603799534991

# exp(mu T) with mu = 0.05, T = 1
GBM_MEAN = 1.05127109637602404261538107713

# exp(sin 1): solution of dX = X d(sin t) from x0 = 1 at T = 1
SIN_ODE = 2.3197768247158531739565903775

# exp(p |c| T) for c = 0.3, T = 1, p = 1, 2, 4
EXP_MOMENTS_C03 = (1.34985880757600308899730103168864, 1.82211880039050893441620275224475,
                   3.3201169227365473420879573468125)

# variance of the Levy area int_0^T W^1 dW^2 at T = 1 is T^2 / 2
LEVY_AREA_VAR = 0.5
