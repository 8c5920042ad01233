"""Bundled desk-scale cases: unit-test toys and the modified 9-bus system.

The 9-bus system keeps the classical bus numbering (generation at 1..3
behind step-up transformers, a six-bus ring 4..9), replaces two conventional
machines with wind units and adds five chord lines so the ring core is
3-edge-connected; the packaged `data/case9mod.grid` file is the serialized
form of :func:`case9mod`.
"""

from __future__ import annotations

import importlib.resources as resources

from .network import Branch, Bus, ConvGen, GridCase, Load, VreGen


def case2() -> GridCase:
    """Two buses, one lossless line, one generator, one load."""
    return GridCase(
        buses=[Bus(1), Bus(2)],
        branches=[Branch(1, 1, 2, g=0.0, b=-5.0, s_max=2.0, theta_max=0.6,
                         w_switch=1.0)],
        conv=[ConvGen(1, 1, p_min=0.0, p_max=2.0, q_min=-1.0, q_max=1.0,
                      ramp_up=2.0, ramp_dn=2.0, w_up=10.0, w_dn=2.0,
                      pw_p=(0.0, 1.0, 2.0), pw_cost=(0.0, 10.0, 25.0))],
        vre=[],
        loads=[Load(1, 2, p=1.0, q=0.2, w_shed=100.0, shed_max=1.0)],
    ).validate()


def case3ring(load_scale=1.0, fc_scale=1.0) -> GridCase:
    """Three-bus ring with one conventional and one wind unit."""
    return GridCase(
        buses=[Bus(1), Bus(2), Bus(3)],
        branches=[
            Branch(1, 1, 2, g=0.05, b=-8.0, b_ch=0.02, s_max=1.5, theta_max=0.5),
            Branch(2, 2, 3, g=0.05, b=-8.0, b_ch=0.02, s_max=1.5, theta_max=0.5),
            Branch(3, 1, 3, g=0.05, b=-8.0, b_ch=0.02, s_max=1.5, theta_max=0.5),
        ],
        conv=[ConvGen(1, 1, p_min=0.0, p_max=2.0, q_min=-1.0, q_max=1.0,
                      ramp_up=2.0, ramp_dn=2.0, w_up=10.0, w_dn=2.0,
                      pw_p=(0.0, 1.0, 2.0), pw_cost=(0.0, 10.0, 25.0))],
        vre=[VreGen(1, 2, s_max=1.2, pf_min=0.9, p_fc=0.8 * fc_scale,
                    ramp_up=3.0, ramp_dn=3.0, w_up=1.0, w_dn=6.0)],
        loads=[
            Load(1, 3, p=1.2 * load_scale, q=0.3 * load_scale, w_shed=200.0,
                 shed_max=1.2 * load_scale),
            Load(2, 2, p=0.4 * load_scale, q=0.1 * load_scale, w_shed=150.0,
                 shed_max=0.4 * load_scale),
        ],
    ).validate()


def case3par() -> GridCase:
    """Three buses with one identical parallel pair (symmetry group of 2)."""
    par = dict(g=0.02, b=-6.0, s_max=0.8, theta_max=0.5, w_switch=1.0)
    return GridCase(
        buses=[Bus(1), Bus(2), Bus(3)],
        branches=[Branch(1, 1, 2, **par), Branch(2, 1, 2, **par),
                  Branch(3, 2, 3, g=0.02, b=-6.0, s_max=1.5, theta_max=0.5),
                  Branch(4, 1, 3, g=0.02, b=-6.0, s_max=1.5, theta_max=0.5)],
        conv=[ConvGen(1, 1, p_min=0.0, p_max=2.0, q_min=-1.0, q_max=1.0,
                      ramp_up=2.0, ramp_dn=2.0, w_up=10.0, w_dn=2.0,
                      pw_p=(0.0, 1.0, 2.0), pw_cost=(0.0, 12.0, 30.0))],
        vre=[VreGen(1, 3, s_max=1.0, pf_min=0.9, p_fc=0.6, ramp_up=3.0,
                    ramp_dn=3.0, w_up=1.0, w_dn=6.0)],
        loads=[Load(1, 2, p=0.9, q=0.25, w_shed=180.0, shed_max=0.9),
               Load(2, 3, p=0.5, q=0.12, w_shed=220.0, shed_max=0.5)],
    ).validate()


def case4() -> GridCase:
    """Four-bus mesh used by the decomposition-vs-monolith suite."""
    ln = dict(g=0.03, b=-7.0, b_ch=0.01, theta_max=0.5)
    return GridCase(
        buses=[Bus(1), Bus(2), Bus(3), Bus(4)],
        branches=[Branch(1, 1, 2, s_max=1.4, **ln), Branch(2, 2, 3, s_max=1.2, **ln),
                  Branch(3, 3, 4, s_max=1.2, **ln), Branch(4, 4, 1, s_max=1.4, **ln),
                  Branch(5, 1, 3, s_max=1.0, **ln)],
        conv=[ConvGen(1, 1, p_min=0.0, p_max=2.5, q_min=-1.2, q_max=1.2,
                      ramp_up=2.0, ramp_dn=2.0, w_up=12.0, w_dn=2.0,
                      pw_p=(0.0, 1.2, 2.5), pw_cost=(0.0, 13.2, 45.7))],
        vre=[VreGen(1, 3, s_max=1.3, pf_min=0.9, p_fc=0.9, ramp_up=3.0,
                    ramp_dn=3.0, w_up=1.0, w_dn=6.0)],
        loads=[Load(1, 2, p=0.8, q=0.2, w_shed=250.0, shed_max=0.8),
               Load(2, 4, p=0.9, q=0.22, w_shed=250.0, shed_max=0.9),
               Load(3, 3, p=0.4, q=0.1, w_shed=200.0, shed_max=0.4)],
    ).validate()


def case9mod() -> GridCase:
    """Modified 9-bus system: 14 branches, one conventional and two wind units."""
    def line(bid, u, v, s, b=-9.0, g=0.3):
        return Branch(bid, u, v, g=g, b=b, b_ch=0.04, s_max=s, theta_max=0.5,
                      w_switch=2.0)

    trafo = dict(g=0.0, b=-12.0, s_max=2.5, theta_max=0.6, w_switch=2.0,
                 ots=False, corr=False, must_on=True)
    return GridCase(
        buses=[Bus(i) for i in range(1, 10)],
        branches=[
            Branch(1, 1, 4, **trafo),
            Branch(2, 2, 7, **trafo),
            Branch(3, 3, 9, **trafo),
            line(4, 4, 5, 1.2), line(5, 5, 6, 1.2), line(6, 6, 7, 1.2),
            line(7, 7, 8, 1.2), line(8, 8, 9, 1.2), line(9, 9, 4, 1.2),
            # five added chords
            line(10, 4, 6, 0.9), line(11, 5, 7, 0.9), line(12, 6, 8, 0.9),
            line(13, 7, 9, 0.9), line(14, 5, 9, 0.9),
        ],
        conv=[ConvGen(1, 1, p_min=0.1, p_max=2.5, q_min=-1.5, q_max=1.5,
                      ramp_up=1.5, ramp_dn=1.5, w_up=15.0, w_dn=3.0,
                      pw_p=(0.1, 1.1, 2.5), pw_cost=(2.0, 22.0, 78.0))],
        vre=[VreGen(1, 2, s_max=1.5, pf_min=0.9, p_fc=1.2, ramp_up=2.0,
                    ramp_dn=2.0, w_up=1.0, w_dn=8.0),
             VreGen(2, 3, s_max=1.2, pf_min=0.9, p_fc=0.9, ramp_up=2.0,
                    ramp_dn=2.0, w_up=1.0, w_dn=8.0)],
        loads=[Load(1, 5, p=0.9, q=0.27, w_shed=600.0, shed_max=0.9),
               Load(2, 6, p=0.9, q=0.27, w_shed=600.0, shed_max=0.9),
               Load(3, 8, p=1.0, q=0.3, w_shed=700.0, shed_max=1.0),
               Load(4, 4, p=0.3, q=0.09, w_shed=500.0, shed_max=0.3),
               Load(5, 7, p=0.3, q=0.09, w_shed=500.0, shed_max=0.3),
               Load(6, 9, p=0.3, q=0.09, w_shed=500.0, shed_max=0.3)],
    ).validate()


def bundled_case_path():
    return resources.files("tsdrots").joinpath("data/case9mod.grid")
