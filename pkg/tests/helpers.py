"""Random generators shared by the test modules."""

import numpy as np

from cyslag.forms import AltForm, _blades


def random_form(rng, dim, degree, density=1.0, complex_=True):
    coeffs = {}
    for blade in _blades(dim, degree):
        if rng.random() < density:
            c = rng.normal()
            if complex_:
                c = c + 1j * rng.normal()
            coeffs[blade] = c
    return AltForm(dim, degree, coeffs)


def random_spd(rng, m=2, lo=0.2, hi=5.0):
    Q, _ = np.linalg.qr(rng.normal(size=(m, m)))
    return Q @ np.diag(rng.uniform(lo, hi, size=m)) @ Q.T


def random_alpha(rng, m=2, scale=1.5):
    return scale * (rng.normal(size=m) + 1j * rng.normal(size=m))
