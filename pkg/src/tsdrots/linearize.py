"""Linearized power-flow and device-capability blocks.

Builders emit rows into a LinearBlock over the stage-tagged variable space
and are reused by all three stages with substituted variable names.  The
gating constant M for switched constraints comes from the run configuration
(`bigM.physical`).  Variable names follow `<sym>.<stage>.<element-id>` so
stage substitution is a pure renaming exercise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .blocks import BINARY, CONTINUOUS, EQ, GE, LE, LinearBlock
from .network import GridCase, IncidenceSet


def vn(sym, stage, eid):
    return f"{sym}.{stage}.{eid}"


@dataclass(frozen=True)
class CosineEnvelopeConfig:
    """Tangent-envelope discretization of cos over [-theta_max, theta_max]."""

    n_p: int = 10

    def __post_init__(self):
        if self.n_p < 1:
            raise ValueError("n_p must be >= 1")

    def tangent_points(self, theta_max):
        step = 2.0 * theta_max / (1.0 + self.n_p)
        return [m * step - theta_max for m in range(1, self.n_p + 1)]


def build_pwl_cost(case: GridCase, stage="s1", block=None) -> LinearBlock:
    """Convex-combination encoding of the piecewise generation cost.

    Introduces one weight per sample point, ties them to a unit simplex and
    recovers the dispatched power and its cost by interpolation.
    """
    block = block if block is not None else LinearBlock()
    for g in case.conv:
        lam = [block.declare(vn(f"pwl{k}", stage, g.id), CONTINUOUS, 0.0, 1.0)
               for k in range(len(g.pw_p))]
        block.add_row({n: 1.0 for n in lam}, EQ, 1.0, tag=f"pwl:simplex:{g.id}")
        pc = block.declare(vn("pc", stage, g.id), CONTINUOUS, g.p_min, g.p_max)
        row = {n: p for n, p in zip(lam, g.pw_p)}
        row[pc] = -1.0
        block.add_row(row, EQ, 0.0, tag=f"pwl:link:{g.id}")
        for n, eta in zip(lam, g.pw_cost):
            block.add_obj(n, eta)
    return block


def pwl_cost_value(g, p):
    """Direct piecewise-linear cost evaluation by segment search (oracle side)."""
    pts, eta = g.pw_p, g.pw_cost
    if not pts[0] <= p <= pts[-1]:
        raise ValueError("dispatch outside sampled range")
    for i in range(len(pts) - 1):
        if p <= pts[i + 1]:
            t = (p - pts[i]) / (pts[i + 1] - pts[i])
            return (1 - t) * eta[i] + t * eta[i + 1]
    return eta[-1]


def build_lpac_branch(case: GridCase, inc: IncidenceSet, z, stage, cfg,
                      block=None) -> LinearBlock:
    """Cold-start linear branch-flow rows with a shared cosine surrogate.

    Emits the Big-M-gated active/reactive flow definitions, the split of the
    reactive flow into a voltage-independent part and a voltage-coupled part,
    and the tangent envelope rows for the single cosine variable per branch
    (one variable serves both flow directions; the envelope is symmetric
    about the y-axis).
    """
    block = block if block is not None else LinearBlock()
    M = cfg.bigm_physical
    env = CosineEnvelopeConfig(cfg.n_p)
    for k, br in enumerate(case.branches):
        if br.theta_max is None or br.theta_max <= 0:
            raise ValueError(f"branch {br.id}: theta_max required for the envelope")
        zk = z[k]
        thf = block.declare(vn("th", stage, br.from_bus))
        tht = block.declare(vn("th", stage, br.to_bus))
        vf = block.declare(vn("v", stage, br.from_bus))
        vt = block.declare(vn("v", stage, br.to_bus))
        names = {s: block.declare(vn(s, stage, br.id))
                 for s in ("pfb", "ptb", "qfb", "qtb", "dqf", "dqt")}
        phi = block.declare(vn("cphi", stage, br.id), CONTINUOUS, 0.0, 1.0)
        g, b = br.g, br.b

        def gated(coeffs, const, tag):
            # const + coeffs'x within +-M(1-z)
            lo = dict(coeffs)
            lo[zk] = lo.get(zk, 0.0) - M
            block.add_row(lo, GE, -M - const, tag=tag + ":lo")
            hi = dict(coeffs)
            hi[zk] = hi.get(zk, 0.0) + M
            block.add_row(hi, LE, M - const, tag=tag + ":hi")

        gated({phi: -g, thf: -b, tht: b, names["pfb"]: -1.0}, g, f"lpac:p_fb:{br.id}")
        gated({phi: -g, thf: b, tht: -b, names["ptb"]: -1.0}, g, f"lpac:p_tb:{br.id}")
        gated({thf: -g, tht: g, phi: b, names["qfb"]: -1.0, names["dqf"]: 1.0},
              -b, f"lpac:q_fb:{br.id}")
        gated({thf: g, tht: -g, phi: b, names["qtb"]: -1.0, names["dqt"]: 1.0},
              -b, f"lpac:q_tb:{br.id}")
        gated({vf: -b, vt: b, names["dqf"]: -1.0}, 0.0, f"lpac:dq_fb:{br.id}")
        gated({vf: b, vt: -b, names["dqt"]: -1.0}, 0.0, f"lpac:dq_tb:{br.id}")
        # nonnegative-loss rows: implied at binary status (end sums equal
        # 2g(1-phi) and -2b(1-phi)), they stop fractional statuses from
        # sourcing power out of the gating slack
        if g >= 0.0:
            block.add_row({names["pfb"]: 1.0, names["ptb"]: 1.0}, GE, 0.0,
                          tag=f"lpac:loss_p:{br.id}")
        if b <= 0.0:
            block.add_row({names["qfb"]: 1.0, names["qtb"]: 1.0}, GE, 0.0,
                          tag=f"lpac:loss_q:{br.id}")
        for m, t in enumerate(env.tangent_points(br.theta_max), start=1):
            block.add_row({phi: 1.0, thf: math.sin(t), tht: -math.sin(t)}, LE,
                          math.cos(t) + math.sin(t) * t,
                          tag=f"lpac:cos:{br.id}:{m}")
    return block


def build_bus_balance(case: GridCase, inc: IncidenceSet, z, stage, cfg,
                      load_p, load_q, block=None) -> LinearBlock:
    """Nodal active/reactive balance with the linearized v^2 ~ 2v - 1.

    The per-(bus, branch) product of voltage and branch status is carried by
    an auxiliary variable forced to v when the branch is closed and to 0
    when it is open.  ``load_p``/``load_q`` give one affine expression
    (coeff dict, constant) per load so the same rows serve the shed and
    unshed stages.
    """
    block = block if block is not None else LinearBlock()
    M = cfg.bigm_physical
    bix = case.bus_index()
    touching = {u: [] for u in range(len(case.buses))}
    for k, br in enumerate(case.branches):
        for u in (bix[br.from_bus], bix[br.to_bus]):
            touching[u].append(k)
    uvar = {}
    for u, bus in enumerate(case.buses):
        vzname = block.declare(vn("v", stage, bus.id))
        for k in touching[u]:
            br = case.branches[k]
            name = block.declare(vn("u", stage, f"{bus.id}_{br.id}"))
            uvar[u, k] = name
            zk = z[k]
            block.add_row({name: 1.0, vzname: -1.0, zk: -M}, GE, -M,
                          tag=f"bal:prod:{bus.id}_{br.id}:a")
            block.add_row({name: 1.0, zk: -M}, LE, 0.0,
                          tag=f"bal:prod:{bus.id}_{br.id}:b")
            block.add_row({name: 1.0, zk: M}, GE, 0.0,
                          tag=f"bal:prod:{bus.id}_{br.id}:c")
            block.add_row({name: 1.0, vzname: -1.0, zk: M}, LE, M,
                          tag=f"bal:prod:{bus.id}_{br.id}:d")
    for u, bus in enumerate(case.buses):
        prow, qrow = {}, {}
        pconst, qconst = 0.0, 0.0
        for j, g in enumerate(case.conv):
            if inc.E_c[u, j]:
                prow[block.declare(vn("pc", stage, g.id))] = 1.0
                qrow[block.declare(vn("qc", stage, g.id),
                                   CONTINUOUS, g.q_min, g.q_max)] = 1.0
        for j, g in enumerate(case.vre):
            if inc.E_v[u, j]:
                prow[block.declare(vn("pv", stage, g.id))] = 1.0
                qrow[block.declare(vn("qv", stage, g.id))] = 1.0
        for j, d in enumerate(case.loads):
            if inc.E_d[u, j]:
                coeffs, const = load_p[j]
                for nme, cf in coeffs.items():
                    prow[nme] = prow.get(nme, 0.0) - cf
                pconst += const
                coeffs, const = load_q[j]
                for nme, cf in coeffs.items():
                    qrow[nme] = qrow.get(nme, 0.0) - cf
                qconst += const
        for k in touching[u]:
            br = case.branches[k]
            side = "pfb" if bix[br.from_bus] == u else "ptb"
            qside = "qfb" if side == "pfb" else "qtb"
            prow[vn(side, stage, br.id)] = prow.get(vn(side, stage, br.id), 0.0) - 1.0
            qrow[vn(qside, stage, br.id)] = qrow.get(vn(qside, stage, br.id), 0.0) - 1.0
            prow[uvar[u, k]] = prow.get(uvar[u, k], 0.0) - 2.0 * br.g_ch
            prow[z[k]] = prow.get(z[k], 0.0) + br.g_ch
            qrow[uvar[u, k]] = qrow.get(uvar[u, k], 0.0) + 2.0 * br.b_ch
            qrow[z[k]] = qrow.get(z[k], 0.0) - br.b_ch
        vname = vn("v", stage, bus.id)
        prow[vname] = prow.get(vname, 0.0) - 2.0 * bus.g_sh
        qrow[vname] = qrow.get(vname, 0.0) + 2.0 * bus.b_sh
        block.add_row(prow, EQ, -bus.g_sh + pconst, tag=f"bal:p:{bus.id}")
        block.add_row(qrow, EQ, bus.b_sh + qconst, tag=f"bal:q:{bus.id}")
    return block


def build_octagon_thermal(case: GridCase, inc: IncidenceSet, z, stage, cfg,
                          block=None) -> LinearBlock:
    """Eight-halfplane outer approximation of each branch MVA circle."""
    block = block if block is not None else LinearBlock()
    rt2 = math.sqrt(2.0)
    for k, br in enumerate(case.branches):
        s, zk = br.s_max, z[k]
        for side in ("fb", "tb"):
            p = vn("p" + side, stage, br.id)
            q = vn("q" + side, stage, br.id)
            cuts = [({p: 1.0}, "p+"), ({p: -1.0}, "p-"), ({q: 1.0}, "q+"),
                    ({q: -1.0}, "q-"), ({p: 1 / rt2, q: 1 / rt2}, "pq+"),
                    ({p: -1 / rt2, q: -1 / rt2}, "pq-"),
                    ({p: 1 / rt2, q: -1 / rt2}, "pmq+"),
                    ({p: -1 / rt2, q: 1 / rt2}, "pmq-")]
            for coeffs, lab in cuts:
                row = dict(coeffs)
                row[zk] = -s
                block.add_row(row, LE, 0.0, tag=f"oct:{side}:{br.id}:{lab}")
    return block


def vre_angle_grid(g, n_s):
    theta_v = math.acos(g.pf_min)
    step = (math.pi / 2.0 + theta_v) / (n_s - 1)
    return [i * step - math.pi / 2.0 for i in range(n_s)]


def build_vre_capability(case: GridCase, stage, n_s, cfg, pv_upper=None,
                         include_pf=True, block=None) -> LinearBlock:
    """Sector tangents of the MVA circle plus power-factor and output caps.

    Only the arc between pure reactive absorption and the minimum power
    factor needs cuts; the rest of the circle is dominated by the output and
    power-factor constraints.  ``pv_upper`` optionally replaces the forecast
    cap with a variable name per unit (second stage).
    """
    if n_s < 2:
        raise ValueError("n_s must be >= 2")
    block = block if block is not None else LinearBlock()
    for j, g in enumerate(case.vre):
        up = g.p_fc if pv_upper is None else pv_upper[j]
        if isinstance(up, str):
            pv = block.declare(vn("pv", stage, g.id), CONTINUOUS, 0.0)
            block.add_row({pv: 1.0, up: -1.0}, LE, 0.0,
                          tag=f"vre:cap:{g.id}")
        elif up is None:
            # cap handled by contingency-gated rows elsewhere
            pv = block.declare(vn("pv", stage, g.id), CONTINUOUS, 0.0, g.s_max)
        else:
            pv = block.declare(vn("pv", stage, g.id), CONTINUOUS, 0.0, up)
        qv = block.declare(vn("qv", stage, g.id))
        if include_pf:
            tanmax = math.tan(math.acos(g.pf_min))
            block.add_row({qv: 1.0, pv: -tanmax}, LE, 0.0,
                          tag=f"vre:pf:{g.id}")
        for i, a in enumerate(vre_angle_grid(g, n_s)):
            block.add_row({pv: math.cos(a), qv: math.sin(a)}, LE, g.s_max,
                          tag=f"vre:mva:{g.id}:{i}")
    return block
