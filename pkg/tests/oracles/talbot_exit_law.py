"""Regenerates the frozen exit-law values in the tests (not collected by pytest).

Laplace transforms for a ball of radius 1 started at its centre, generator
Delta/2:  E exp(-s T) = 1 / I_0(sqrt(2 s)) in 2D and sqrt(2 s) / sinh(sqrt(2 s)) in 3D.
Inverted with mpmath's Talbot contour at 30 digits.
"""

import mpmath as mp
mp.mp.dps = 30
def S2(t):  # P(T > t), unit disk from centre: LT of survival = (1 - 1/I0(sqrt(2s)))/s
    return mp.invertlaplace(lambda s: (1 - 1/mp.besseli(0, mp.sqrt(2*s)))/s, t, method='talbot')
def F2(t):
    return mp.invertlaplace(lambda s: 1/(s*mp.besseli(0, mp.sqrt(2*s))), t, method='talbot')
def F3(t):
    return mp.invertlaplace(lambda s: mp.sqrt(2*s)/mp.sinh(mp.sqrt(2*s))/s, t, method='talbot')
def S3(t):
    return mp.invertlaplace(lambda s: (1 - mp.sqrt(2*s)/mp.sinh(mp.sqrt(2*s)))/s, t, method='talbot')
for t in ['0.02','0.05','0.1','0.2','0.5','1','2','4']:
    t=mp.mpf(t); print('n2', t, mp.nstr(F2(t),17), mp.nstr(S2(t),17))
for t in ['0.02','0.05','0.1','0.2','0.5','1','2']:
    t=mp.mpf(t); print('n3', t, mp.nstr(F3(t),17), mp.nstr(S3(t),17))
print('j0', [mp.nstr(mp.besseljzero(0,k),17) for k in (1,2,3,64)])
print('j1/2', [mp.nstr(mp.besseljzero(0.5,k),17) for k in (1,2,64)])
