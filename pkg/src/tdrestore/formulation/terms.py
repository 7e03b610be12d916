"""Vectorized constraint terms with analytic first and second derivatives.

A term family adds its contribution to a set of local constraint rows. Every
family publishes fixed raw Jacobian and Hessian coordinates (duplicates allowed,
Hessian in the lower triangle); only the values change between evaluations.
"""

from __future__ import annotations

import numpy as np


def _i(a):
    return np.asarray(a, dtype=np.int64)


def _f(a):
    return np.asarray(a, dtype=float)


class PolyTerms:
    """Rows of the form ``const + sum(a * x[j]) + sum(c * x[p] * x[q])``."""

    def __init__(self, nrows, lin=None, quad=None, const=None):
        self.nrows = nrows
        lr, lc, lv = lin if lin is not None else ([], [], [])
        qr, qa, qb, qv = quad if quad is not None else ([], [], [], [])
        self.lr, self.lc, self.lv = _i(lr), _i(lc), _f(lv)
        self.qr, self.qa, self.qb, self.qv = _i(qr), _i(qa), _i(qb), _f(qv)
        self.const = np.zeros(nrows) if const is None else _f(const)
        self.jac_rows = np.concatenate([self.lr, self.qr, self.qr])
        self.jac_cols = np.concatenate([self.lc, self.qa, self.qb])
        self.hess_rows = np.maximum(self.qa, self.qb)
        self.hess_cols = np.minimum(self.qa, self.qb)
        self._hscale = np.where(self.qa == self.qb, 2.0, 1.0) * self.qv

    def values(self, x):
        out = self.const.copy()
        if len(self.lr):
            out += np.bincount(self.lr, self.lv * x[self.lc], minlength=self.nrows)
        if len(self.qr):
            out += np.bincount(self.qr, self.qv * x[self.qa] * x[self.qb], minlength=self.nrows)
        return out

    def jac_values(self, x):
        return np.concatenate([self.lv, self.qv * x[self.qb], self.qv * x[self.qa]])

    def hess_values(self, x, lam):
        return self._hscale * lam[self.qr]


class AcpfTerms:
    """Polar AC injections ``P_i = sum_k V_i V_k (G cos + B sin)`` and the Q analogue.

    ``entries`` are the bus admittance nonzeros ``(i, k, G, B)`` in bus
    positions; the families are replicated for each period via the slot arrays
    ``V[t, i]`` and ``theta[t, i]``. Row layout: P rows ``rowp[t, i]`` and Q rows
    ``rowq[t, i]``.
    """

    def __init__(self, nrows, entries, V, theta, rowp, rowq):
        self.nrows = nrows
        ii, kk, G, B = (np.asarray(e) for e in entries)
        T = V.shape[0]
        off = ii != kk
        t_off = np.repeat(np.arange(T), off.sum())
        io, ko = np.tile(ii[off], T), np.tile(kk[off], T)
        self.G, self.B = np.tile(G[off], T), np.tile(B[off], T)
        self.vi, self.vk = V[t_off, io], V[t_off, ko]
        self.ti, self.tk = theta[t_off, io], theta[t_off, ko]
        self.rp, self.rq = rowp[t_off, io], rowq[t_off, io]

        d = ~off
        t_d = np.repeat(np.arange(T), d.sum())
        idg = np.tile(ii[d], T)
        self.Gd, self.Bd = np.tile(G[d], T), np.tile(B[d], T)
        self.vd = V[t_d, idg]
        self.rpd, self.rqd = rowp[t_d, idg], rowq[t_d, idg]

        cols4 = [self.vi, self.vk, self.ti, self.tk]
        self.jac_rows = np.concatenate([np.tile(self.rp, 4), np.tile(self.rq, 4),
                                        self.rpd, self.rqd])
        self.jac_cols = np.concatenate(cols4 + cols4 + [self.vd, self.vd])

        pairs = [(self.vi, self.vk), (self.vi, self.ti), (self.vi, self.tk), (self.vk, self.ti),
                 (self.vk, self.tk), (self.ti, self.ti), (self.tk, self.tk), (self.ti, self.tk)]
        hr = [np.maximum(a, b) for a, b in pairs] + [self.vd]
        hc = [np.minimum(a, b) for a, b in pairs] + [self.vd]
        self.hess_rows = np.concatenate(hr)
        self.hess_cols = np.concatenate(hc)

    def _trig(self, x):
        Vi, Vk = x[self.vi], x[self.vk]
        dth = x[self.ti] - x[self.tk]
        c, s = np.cos(dth), np.sin(dth)
        g = self.G * c + self.B * s       # P kernel
        gp = -self.G * s + self.B * c     # d g / d theta_ik
        h = self.G * s - self.B * c       # Q kernel
        hp = self.G * c + self.B * s      # d h / d theta_ik
        return Vi, Vk, g, gp, h, hp

    def values(self, x):
        Vi, Vk, g, _, h, _ = self._trig(x)
        out = np.bincount(self.rp, Vi * Vk * g, minlength=self.nrows)
        out += np.bincount(self.rq, Vi * Vk * h, minlength=self.nrows)
        Vd2 = x[self.vd] ** 2
        out += np.bincount(self.rpd, self.Gd * Vd2, minlength=self.nrows)
        out += np.bincount(self.rqd, -self.Bd * Vd2, minlength=self.nrows)
        return out

    def jac_values(self, x):
        Vi, Vk, g, gp, h, hp = self._trig(x)
        VV = Vi * Vk
        Vd = x[self.vd]
        return np.concatenate([Vk * g, Vi * g, VV * gp, -VV * gp,
                               Vk * h, Vi * h, VV * hp, -VV * hp,
                               2 * self.Gd * Vd, -2 * self.Bd * Vd])

    def hess_values(self, x, lam):
        Vi, Vk, g, gp, h, hp = self._trig(x)
        lp, lq = lam[self.rp], lam[self.rq]
        gg = lp * g + lq * h
        gd = lp * gp + lq * hp
        VV = Vi * Vk
        dd = -VV * gg                      # second theta derivative
        diag = 2 * self.Gd * lam[self.rpd] - 2 * self.Bd * lam[self.rqd]
        return np.concatenate([gg, Vk * gd, -Vk * gd, Vi * gd, -Vi * gd, dd, dd, -dd, diag])


def admittance_entries(buses, branches):
    """Bus admittance nonzeros ``(i, k, G, B)`` in bus positions, duplicates summed."""
    pos = {b: k for k, b in enumerate(buses)}
    Y = {}
    for br in branches:
        f, t = pos[br.from_bus], pos[br.to_bus]
        y = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b_shunt
        for key, val in (((f, f), y + ysh), ((t, t), y + ysh), ((f, t), -y), ((t, f), -y)):
            Y[key] = Y.get(key, 0j) + val
    keys = sorted(Y)
    ii = np.array([k[0] for k in keys], dtype=np.int64)
    kk = np.array([k[1] for k in keys], dtype=np.int64)
    vals = np.array([Y[k] for k in keys])
    return ii, kk, vals.real, vals.imag
