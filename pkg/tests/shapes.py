"""Small polygons shared across tests."""

import math

import numpy as np

from oricorner.geom import Polygon


def square(x0=1.0, y0=1.0, side=4.0):
    return Polygon([(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)])


def regular(n, r=1.0, cx=0.0, cy=0.0, phase=0.0):
    t = phase + 2 * math.pi * np.arange(n) / n
    return Polygon(np.stack([cx + r * np.cos(t), cy + r * np.sin(t)], axis=1))


def l_shape(x0=4.0, y0=4.0):
    """Six-vertex L with its reflex corner at (x0 + 10, y0 + 8)."""
    return Polygon([(x0, y0), (x0 + 20, y0), (x0 + 20, y0 + 8), (x0 + 10, y0 + 8),
                    (x0 + 10, y0 + 20), (x0, y0 + 20)])
