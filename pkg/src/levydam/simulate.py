"""Monte Carlo path oracle for the release policy.

Simulates the content process under the policy and produces per-cycle
records (fill time, crossing state, release time, discounted and plain
maintenance integrals) that back independent estimates of every analytic
quantity in the package.

Simulation schemes per family:

* compound Poisson drift: exact event-driven paths, no discretisation;
* Brownian drift: synchronised time stepping across all paths with the
  within-step minimum (or maximum) sampled exactly for the reflecting
  barrier and a Brownian bridge correction for threshold crossings;
* gamma / inverse Gaussian drift: exact increment sampling on the grid,
  accepting grid resolution error in crossing detection;
* generic bounded variation: jumps below ``small_jump_cutoff`` replaced by
  their mean drift, larger jumps sampled from the tail via a quantile table.

Randomness is counter based: path-indexed routines draw from Philox streams
keyed by (seed, path index); vectorised routines consume the (seed, 0)
stream.  Fixed (seed, config, model, policy) reproduce results bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .models import (
    BrownianDrift,
    CompoundPoissonDrift,
    GammaDrift,
    GenericBoundedVariation,
    InverseGaussianDrift,
    LevyModel,
)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)


@dataclass(frozen=True)
class PathConfig:
    """Simulation controls.

    ``time_step`` drives grid based families only; ``horizon`` caps a single
    cycle, after which the cycle is flagged partial and dropped from
    estimates.
    """

    time_step: float = 1e-3
    n_paths: int = 10_000
    seed: int = 0
    horizon: float = 1e4
    small_jump_cutoff: float = 1e-6

    def __post_init__(self):
        if self.time_step <= 0:
            raise ValueError("time_step must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")


@dataclass(frozen=True)
class SimulationEstimate:
    mean: float
    std_error: float
    n_effective: int
    quantity_tag: str

    def agrees_with(self, analytic: float, k: float = 3.0) -> bool:
        """True when the analytic value lies within k standard errors."""
        slack = k * self.std_error + 1e-12
        return abs(analytic - self.mean) <= slack


def path_rng(seed: int, index: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Raw input paths
# ---------------------------------------------------------------------------

@dataclass
class InputPath:
    """Sampled net inflow path started at zero.

    ``times`` and ``values`` record the skeleton (event times for compound
    Poisson, the uniform grid otherwise); jump events are listed separately.
    """

    times: np.ndarray
    values: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray

    def value_at(self, t: float) -> float:
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return float(self.values[max(idx, 0)])


def simulate_input_path(model: LevyModel, config: PathConfig, t_end: float,
                        path_index: int = 0) -> InputPath:
    """One path of the raw input process on [0, t_end]."""
    if t_end > config.horizon:
        raise ValueError("t_end exceeds the configured horizon")
    rng = path_rng(config.seed, path_index)
    if isinstance(model, CompoundPoissonDrift):
        zeta, rate = model.zeta, model.rate
        jt, js = [], []
        t = 0.0
        while True:
            t += rng.exponential(1.0 / rate)
            if t >= t_end:
                break
            jt.append(t)
            js.append(float(model.jumps.sample(rng, 1)[0]))
        jt = np.array(jt)
        js = np.array(js)
        times = np.concatenate(([0.0], jt, [t_end]))
        cum = np.concatenate(([0.0], np.cumsum(js), [js.sum()]))
        values = cum - zeta * times
        return InputPath(times, values, jt, js)
    n = int(math.ceil(t_end / config.time_step))
    dt = t_end / n
    times = np.linspace(0.0, t_end, n + 1)
    if isinstance(model, BrownianDrift):
        incs = rng.normal(model.mu * dt, math.sqrt(model.sigma2 * dt), size=n)
        jt = js = np.empty(0)
        if model.has_jumps:
            jt, js = _poisson_jumps(rng, model.jump_rate, model.jumps, t_end)
            idx = np.minimum(np.searchsorted(times[1:], jt, side="left"), n - 1)
            np.add.at(incs, idx, js)
        values = np.concatenate(([0.0], np.cumsum(incs)))
        return InputPath(times, values, jt, js)
    incs = _subordinator_increments(model, rng, dt, n) - _drift_rate(model) * dt
    values = np.concatenate(([0.0], np.cumsum(incs)))
    return InputPath(times, values, np.empty(0), np.empty(0))


def _poisson_jumps(rng, rate, jumps, t_end):
    count = rng.poisson(rate * t_end)
    jt = np.sort(rng.uniform(0.0, t_end, size=count))
    js = jumps.sample(rng, count) if count else np.empty(0)
    return jt, np.asarray(js, dtype=float)


def _drift_rate(model) -> float:
    return model.zeta


def _subordinator_increments(model, rng, dt, size):
    if isinstance(model, GammaDrift):
        return rng.gamma(model.a * dt, 1.0 / model.b, size=size)
    if isinstance(model, InverseGaussianDrift):
        return rng.wald(dt / model.c, dt * dt / (model.sigma ** 2), size=size)
    raise TypeError(f"no grid sampler for {type(model).__name__}")


# ---------------------------------------------------------------------------
# Cycle records
# ---------------------------------------------------------------------------

@dataclass
class CycleRecords:
    """Per-cycle outcomes of the policy simulation.

    Discount-dependent entries are dictionaries keyed by alpha; the key 0.0
    holds the undiscounted values.  Release integrals are discounted from
    the cycle start, so cost formulas compose without extra factors.
    """

    fill_time: np.ndarray
    release_time: np.ndarray
    crossing_state: np.ndarray
    e_fill: dict
    e_cycle: dict
    fill_g: dict
    release_g: dict
    release_disc_time: dict
    n_partial: int
    M: float

    @property
    def n_cycles(self) -> int:
        return len(self.fill_time)

    @property
    def cycle_length(self) -> np.ndarray:
        return self.fill_time + self.release_time

    @property
    def output_volume(self) -> np.ndarray:
        return self.M * self.release_time

    def overshoot_samples(self, lam: float) -> np.ndarray:
        """Overshoot beyond the threshold for jump crossings."""
        return self.crossing_state[self.crossing_state > lam] - lam

    def cycle_cost_samples(self, costs, alpha: float) -> np.ndarray:
        """Discounted first-cycle cost per cycle, matching the analytic form."""
        if alpha not in self.e_fill:
            raise KeyError(f"alpha={alpha} was not simulated")
        M = self.M
        return (M * costs.K2 + M * costs.K1 * self.e_fill[alpha]
                - costs.R * M * self.release_disc_time[alpha]
                + self.fill_g[alpha] + self.release_g[alpha])

    def average_cost_samples(self, costs) -> tuple:
        """(net undiscounted cycle cost, cycle length) pairs for the ratio."""
        M = self.M
        cost = (M * (costs.K1 + costs.K2) + self.fill_g[0.0]
                + self.release_g[0.0] - costs.R * M * self.release_time)
        return cost, self.cycle_length


def estimate(quantity_tag: str, values, lengths=None) -> SimulationEstimate:
    """Sample mean and standard error; ratio estimator when lengths given.

    The ratio estimator (for long-run averages) uses the delta method
    standard error of sum(values) / sum(lengths) over regeneration cycles.
    """
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < 2:
        raise ValueError("need at least 2 completed cycles for an estimate")
    if lengths is None:
        mean = float(values.mean())
        se = float(values.std(ddof=1) / math.sqrt(n))
        return SimulationEstimate(mean, se, n, quantity_tag)
    lengths = np.asarray(lengths, dtype=float)
    ratio = float(values.sum() / lengths.sum())
    resid = values - ratio * lengths
    se = float(math.sqrt(resid.var(ddof=1) / n) / lengths.mean())
    return SimulationEstimate(ratio, se, n, quantity_tag)


# ---------------------------------------------------------------------------
# Compound Poisson cycles: exact event-driven simulation
# ---------------------------------------------------------------------------

def _segment_integrals(g, y0: float, slope: float, t0: float, duration: float,
                       alphas, out: dict, stick_at_zero: bool):
    """Accumulate int e^{-alpha (t0+t)} g(y0 - slope t) dt over [0, duration].

    Splits at breakpoint crossings (and at the sticking time when the
    content is absorbed at zero between jumps) and applies Gauss-Legendre
    on each smooth piece.
    """
    if duration <= 0.0 or getattr(g, "is_zero", False):
        return
    cuts = [0.0, duration]
    if stick_at_zero and slope > 0 and y0 - slope * duration < 0:
        cuts.append(y0 / slope)
    for b in g.breakpoints:
        if slope != 0.0:
            tb = (y0 - b) / slope
            if 0.0 < tb < duration:
                cuts.append(tb)
    cuts = sorted(set(cuts))
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        ts = mid + half * _GL_NODES
        ys = y0 - slope * ts
        if stick_at_zero:
            ys = np.maximum(ys, 0.0)
        gs = np.array([g(y) for y in ys])
        for a in alphas:
            damp = np.exp(-a * (t0 + ts)) if a else 1.0
            out[a] += half * float(np.dot(_GL_WEIGHTS, gs * damp))


def _cp_fill(model, rng, x, lam, horizon, reflected, g, alphas):
    """Fill phase of a compound Poisson cycle; returns (T, state, ints) or None."""
    zeta, rate = model.zeta, model.rate
    y, t = x, 0.0
    ints = {a: 0.0 for a in alphas}
    while t < horizon:
        gap = rng.exponential(1.0 / rate)
        gap = min(gap, horizon - t)
        _segment_integrals(g, y, zeta, t, gap, alphas, ints, reflected)
        y_end = y - zeta * gap
        if reflected:
            y_end = max(y_end, 0.0)
        t += gap
        if t >= horizon:
            break
        jump = float(model.jumps.sample(rng, 1)[0])
        y = y_end + jump
        if y >= lam:
            return t, y, ints
    return None


def _cp_release(model, rng, z, tau, V, M, horizon, g_star, alphas, t_start):
    """Release phase from z; returns (duration, ints discounted from 0) or None."""
    zeta, rate = model.zeta, model.rate
    slope = zeta + M
    y = min(z, V)
    t = 0.0
    ints = {a: 0.0 for a in alphas}
    while t_start + t < horizon:
        gap = rng.exponential(1.0 / rate)
        t_abs = (y - tau) / slope
        if t_abs <= gap:
            _segment_integrals(g_star, y, slope, t_start + t, t_abs, alphas,
                               ints, False)
            return t + t_abs, ints
        gap = min(gap, horizon - t_start - t)
        _segment_integrals(g_star, y, slope, t_start + t, gap, alphas, ints, False)
        y -= slope * gap
        t += gap
        if t_start + t >= horizon:
            break
        y = min(y + float(model.jumps.sample(rng, 1)[0]), V)
    return None


def _run_cycles_cp(model, policy, costs, config, reflected, alphas):
    lam, tau, V, M = policy.lam, policy.tau, policy.V, policy.M
    recs = _RecordBuilder(alphas, M)
    for i in range(config.n_paths):
        rng = path_rng(config.seed, i)
        fill = _cp_fill(model, rng, tau, lam, config.horizon, reflected,
                        costs.g, alphas)
        if fill is None:
            recs.n_partial += 1
            continue
        t_fill, state, fill_ints = fill
        rel = _cp_release(model, rng, state, tau, V, M, config.horizon,
                          costs.g_star, alphas, t_fill)
        if rel is None:
            recs.n_partial += 1
            continue
        t_rel, rel_ints = rel
        recs.add(t_fill, t_rel, state, fill_ints, rel_ints, alphas)
    return recs.build()


class _RecordBuilder:
    def __init__(self, alphas, M):
        self.alphas = alphas
        self.M = M
        self.fill_time = []
        self.release_time = []
        self.state = []
        self.fill_g = {a: [] for a in alphas}
        self.release_g = {a: [] for a in alphas}
        self.e_fill = {a: [] for a in alphas}
        self.e_cycle = {a: [] for a in alphas}
        self.rel_disc_time = {a: [] for a in alphas}
        self.n_partial = 0

    def add(self, t_fill, t_rel, state, fill_ints, rel_ints, alphas):
        self.fill_time.append(t_fill)
        self.release_time.append(t_rel)
        self.state.append(state)
        for a in alphas:
            ef = math.exp(-a * t_fill)
            ec = math.exp(-a * (t_fill + t_rel))
            self.e_fill[a].append(ef)
            self.e_cycle[a].append(ec)
            self.fill_g[a].append(fill_ints[a])
            self.release_g[a].append(rel_ints[a])
            self.rel_disc_time[a].append((ef - ec) / a if a else t_rel)

    def build(self) -> CycleRecords:
        arr = lambda d: {a: np.asarray(v, dtype=float) for a, v in d.items()}
        return CycleRecords(
            fill_time=np.asarray(self.fill_time, dtype=float),
            release_time=np.asarray(self.release_time, dtype=float),
            crossing_state=np.asarray(self.state, dtype=float),
            e_fill=arr(self.e_fill), e_cycle=arr(self.e_cycle),
            fill_g=arr(self.fill_g), release_g=arr(self.release_g),
            release_disc_time=arr(self.rel_disc_time),
            n_partial=self.n_partial, M=self.M)


# ---------------------------------------------------------------------------
# Grid based cycles: Brownian and subordinator families, vectorised
# ---------------------------------------------------------------------------

def _run_cycles_grid(model, policy, costs, config, reflected, alphas):
    """All paths advance on a common clock; one cycle per path.

    Live paths are kept in compact arrays (finished paths are dropped each
    step), so late stragglers cost almost nothing.
    """
    lam, tau, V, M = policy.lam, policy.tau, policy.V, policy.M
    n = config.n_paths
    dt = config.time_step
    rng = path_rng(config.seed, 0)
    is_bm = isinstance(model, BrownianDrift)
    creeps = is_bm and not model.has_jumps
    sig2 = model.sigma2 if is_bm else 0.0
    sig_dt = math.sqrt(sig2 * dt) if is_bm else 0.0
    g_vec = None if costs.g.is_zero else _vectorize_poly(costs.g)
    gs_vec = None if costs.g_star.is_zero else _vectorize_poly(costs.g_star)

    # compact live-path state
    orig = np.arange(n)
    y = np.full(n, float(tau))
    filling = np.ones(n, dtype=bool)
    t_fill = np.zeros(n)
    gf = {a: np.zeros(n) for a in alphas}
    gr = {a: np.zeros(n) for a in alphas}
    cross = np.zeros(n)

    # per-path outputs
    out_fill_time = np.zeros(n)
    out_release_time = np.zeros(n)
    out_state = np.zeros(n)
    out_gf = {a: np.zeros(n) for a in alphas}
    out_gr = {a: np.zeros(n) for a in alphas}
    out_efill = {a: np.zeros(n) for a in alphas}
    out_ecycle = {a: np.zeros(n) for a in alphas}
    done = np.zeros(n, dtype=bool)

    t = 0.0
    steps = int(math.ceil(config.horizon / dt))
    for _ in range(steps):
        m = len(y)
        if m == 0:
            break
        if is_bm:
            w = rng.normal(model.mu * dt, sig_dt, size=m)
            u_ext = rng.uniform(size=m)
            u_cross = rng.uniform(size=m)
            if model.has_jumps:
                cnt = rng.poisson(model.jump_rate * dt, size=m)
                for k in np.nonzero(cnt)[0]:
                    w[k] += model.jumps.sample(rng, cnt[k]).sum()
        else:
            w = _subordinator_increments(model, rng, dt, m) - model.zeta * dt
        w = np.where(filling, w, w - M * dt)

        if is_bm:
            root = np.sqrt(w * w - 2.0 * sig2 * dt * np.log(u_ext))
            ext = 0.5 * (w + np.where(filling, -root, root))
            y_pre = np.where(
                filling,
                y + w - (np.minimum(0.0, y + ext) if reflected else 0.0),
                y + w - np.maximum(0.0, y + ext - V))
            inert = np.where(filling, (y < lam) & (y_pre < lam),
                             (y > tau) & (y_pre > tau))
            gap = np.where(filling, (lam - y) * (lam - y_pre),
                           (y - tau) * (y_pre - tau))
            p = np.where(inert, np.exp(-2.0 * np.maximum(gap, 0.0) / (sig2 * dt)),
                         0.0)
            hit = np.where(filling, y_pre >= lam, y_pre <= tau) | (u_cross < p)
            state_now = (np.full_like(y_pre, lam) if creeps
                         else np.where(y_pre >= lam, y_pre, lam))
        else:
            y_pre = np.where(filling,
                             np.maximum(y + w, 0.0) if reflected else y + w,
                             np.minimum(y + w, V))
            hit = np.where(filling, y_pre >= lam, y_pre <= tau)
            state_now = y_pre

        d1 = t + dt
        if g_vec is not None:
            f = filling
            if f.any():
                base = g_vec(y[f])
                topd = g_vec(np.minimum(y_pre[f], lam))
                for a in alphas:
                    gf[a][f] += 0.5 * dt * (math.exp(-a * t) * base
                                            + math.exp(-a * d1) * topd)
        if gs_vec is not None:
            r = ~filling
            if r.any():
                base = gs_vec(y[r])
                topd = gs_vec(np.maximum(y_pre[r], tau))
                for a in alphas:
                    gr[a][r] += 0.5 * dt * (math.exp(-a * t) * base
                                            + math.exp(-a * d1) * topd)
        t = d1

        # fill -> release transitions
        crossed = filling & hit
        if crossed.any():
            t_fill[crossed] = t
            cross[crossed] = state_now[crossed]
            y[crossed] = np.minimum(state_now[crossed], V)
            filling[crossed] = False
        keep_going = filling & ~hit
        y[keep_going] = y_pre[keep_going]

        # release -> done
        finished = (~filling) & hit & ~crossed
        still = (~filling) & ~hit & ~crossed
        y[still] = y_pre[still]
        if finished.any():
            pid = orig[finished]
            out_fill_time[pid] = t_fill[finished]
            out_release_time[pid] = t - t_fill[finished]
            out_state[pid] = cross[finished]
            for a in alphas:
                out_gf[a][pid] = gf[a][finished]
                out_gr[a][pid] = gr[a][finished]
                out_efill[a][pid] = np.exp(-a * t_fill[finished])
                out_ecycle[a][pid] = math.exp(-a * t)
            done[pid] = True
            live = ~finished
            orig, y, filling, t_fill, cross = (arr[live] for arr in
                                               (orig, y, filling, t_fill, cross))
            gf = {a: v[live] for a, v in gf.items()}
            gr = {a: v[live] for a, v in gr.items()}

    sel = lambda d: {a: v[done] for a, v in d.items()}
    rel_disc = {}
    for a in alphas:
        if a:
            rel_disc[a] = (out_efill[a][done] - out_ecycle[a][done]) / a
        else:
            rel_disc[a] = out_release_time[done]
    return CycleRecords(
        fill_time=out_fill_time[done], release_time=out_release_time[done],
        crossing_state=out_state[done], e_fill=sel(out_efill),
        e_cycle=sel(out_ecycle), fill_g=sel(out_gf), release_g=sel(out_gr),
        release_disc_time=rel_disc, n_partial=int(n - done.sum()), M=M)


def _vectorize_poly(g):
    bps = np.asarray(g.breakpoints)
    pieces = g.coeffs

    def call(ys):
        ys = np.asarray(ys, dtype=float)
        out = np.zeros_like(ys)
        inside = (ys >= bps[0]) & (ys < bps[-1])
        if inside.any():
            idx = np.clip(np.searchsorted(bps, ys[inside], side="right") - 1,
                          0, len(pieces) - 1)
            u = ys[inside] - bps[idx]
            vals = np.zeros_like(u)
            for pn in range(len(pieces)):
                mask = idx == pn
                if mask.any():
                    vals[mask] = np.polynomial.polynomial.polyval(
                        u[mask], pieces[pn])
            out[inside] = vals
        return out

    return call


# ---------------------------------------------------------------------------
# Public entry points
# ---------------------------------------------------------------------------

def run_policy_cycles(model: LevyModel, policy, costs, config: PathConfig,
                      reflected: bool = True, alphas: Sequence[float] = (),
                      dump_path: str | None = None) -> CycleRecords:
    """Simulate independent regeneration cycles started at the lower threshold.

    Returns per-cycle records; ``alphas`` selects the discount rates carried
    through the integrals (0.0, the undiscounted case, is always included).
    With ``dump_path`` set, one JSON record per cycle is written to that
    file.
    """
    alpha_list = sorted({0.0, *map(float, alphas)})
    model = _prepare_model(model, config)
    if isinstance(model, CompoundPoissonDrift):
        records = _run_cycles_cp(model, policy, costs, config, reflected,
                                 alpha_list)
    else:
        records = _run_cycles_grid(model, policy, costs, config, reflected,
                                   alpha_list)
    if dump_path is not None:
        _dump_records(records, dump_path)
    return records


def _dump_records(records: CycleRecords, path: str):
    import json

    with open(path, "w") as fh:
        for i in range(records.n_cycles):
            row = {
                "fill_time": records.fill_time[i],
                "release_time": records.release_time[i],
                "crossing_state": records.crossing_state[i],
                "output_volume": records.output_volume[i],
            }
            for a in sorted(records.e_fill):
                if a:
                    row[f"e_cycle[{a:g}]"] = records.e_cycle[a][i]
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def simulate_fill_phase(model: LevyModel, x: float, lam: float,
                        config: PathConfig, reflected: bool = True):
    """Fill phase only: (crossing times, crossing states, number unfinished)."""
    model = _prepare_model(model, config)
    zero_g = _ZeroRate()
    if isinstance(model, CompoundPoissonDrift):
        times, states, partial = [], [], 0
        for i in range(config.n_paths):
            rng = path_rng(config.seed, i)
            got = _cp_fill(model, rng, x, lam, config.horizon, reflected,
                           zero_g, [0.0])
            if got is None:
                partial += 1
            else:
                times.append(got[0])
                states.append(got[1])
        return np.asarray(times), np.asarray(states), partial
    return _run_cycles_grid_fill_only(model, lam, config, reflected, x)


def simulate_release_phase(model: LevyModel, z: float, tau: float, V: float,
                           M: float, config: PathConfig):
    """Release phase only from content z: (passage times, number unfinished)."""
    model = _prepare_model(model, config)
    zero_g = _ZeroRate()
    if isinstance(model, CompoundPoissonDrift):
        times, partial = [], 0
        for i in range(config.n_paths):
            rng = path_rng(config.seed, i)
            got = _cp_release(model, rng, z, tau, V, M, config.horizon,
                              zero_g, [0.0], 0.0)
            if got is None:
                partial += 1
            else:
                times.append(got[0])
        return np.asarray(times), partial
    n = config.n_paths
    dt = config.time_step
    rng = path_rng(config.seed, 0)
    is_bm = isinstance(model, BrownianDrift)
    sig2 = model.sigma2 if is_bm else 0.0
    y = np.full(n, float(min(z, V)))
    orig = np.arange(n)
    out = np.zeros(n)
    done = np.zeros(n, dtype=bool)
    t = 0.0
    for _ in range(int(math.ceil(config.horizon / dt))):
        m = len(y)
        if m == 0:
            break
        if is_bm:
            w = rng.normal((model.mu - M) * dt, math.sqrt(sig2 * dt), size=m)
            u_ext = rng.uniform(size=m)
            u_cross = rng.uniform(size=m)
            if model.has_jumps:
                cnt = rng.poisson(model.jump_rate * dt, size=m)
                for k in np.nonzero(cnt)[0]:
                    w[k] += model.jumps.sample(rng, cnt[k]).sum()
            root = np.sqrt(w * w - 2.0 * sig2 * dt * np.log(u_ext))
            m_max = 0.5 * (w + root)
            y_pre = y + w - np.maximum(0.0, y + m_max - V)
            inert = (y > tau) & (y_pre > tau)
            p = np.where(inert, np.exp(-2.0 * np.maximum(
                (y - tau) * (y_pre - tau), 0.0) / (sig2 * dt)), 0.0)
            hit = (y_pre <= tau) | (u_cross < p)
        else:
            w = _subordinator_increments(model, rng, dt, m) \
                - (model.zeta + M) * dt
            y_pre = np.minimum(y + w, V)
            hit = y_pre <= tau
        t += dt
        if hit.any():
            out[orig[hit]] = t
            done[orig[hit]] = True
            keep = ~hit
            orig, y = orig[keep], np.maximum(y_pre[keep], tau)
        else:
            y = np.maximum(y_pre, tau)
    return out[done], int(n - done.sum())


class _ZeroRate:
    breakpoints = (0.0, 1.0)
    is_zero = True

    def __call__(self, y):
        return 0.0


def _run_cycles_grid_fill_only(model, lam, config, reflected, x):
    """Fill-only grid simulation: (times, states, n unfinished)."""
    n = config.n_paths
    dt = config.time_step
    rng = path_rng(config.seed, 0)
    is_bm = isinstance(model, BrownianDrift)
    sig2 = model.sigma2 if is_bm else 0.0
    y = np.full(n, float(x))
    orig = np.arange(n)
    out_t = np.zeros(n)
    out_s = np.zeros(n)
    done = np.zeros(n, dtype=bool)
    t = 0.0
    for _ in range(int(math.ceil(config.horizon / dt))):
        m = len(y)
        if m == 0:
            break
        if is_bm:
            w = rng.normal(model.mu * dt, math.sqrt(sig2 * dt), size=m)
            u_ext = rng.uniform(size=m)
            u_cross = rng.uniform(size=m)
            if model.has_jumps:
                cnt = rng.poisson(model.jump_rate * dt, size=m)
                for k in np.nonzero(cnt)[0]:
                    w[k] += model.jumps.sample(rng, cnt[k]).sum()
            root = np.sqrt(w * w - 2.0 * sig2 * dt * np.log(u_ext))
            m_min = 0.5 * (w - root)
            y_pre = (y + w - np.minimum(0.0, y + m_min) if reflected
                     else y + w)
            inert = (y < lam) & (y_pre < lam)
            p = np.where(inert, np.exp(-2.0 * np.maximum(
                (lam - y) * (lam - y_pre), 0.0) / (sig2 * dt)), 0.0)
            hit = (y_pre >= lam) | (u_cross < p)
            state = (np.full_like(y_pre, lam) if not model.has_jumps
                     else np.where(y_pre >= lam, y_pre, lam))
        else:
            w = _subordinator_increments(model, rng, dt, m) - model.zeta * dt
            y_pre = np.maximum(y + w, 0.0) if reflected else y + w
            hit = y_pre >= lam
            state = y_pre
        t += dt
        if hit.any():
            out_t[orig[hit]] = t
            out_s[orig[hit]] = state[hit]
            done[orig[hit]] = True
            keep = ~hit
            orig, y = orig[keep], y_pre[keep]
        else:
            y = y_pre
    return out_t[done], out_s[done], int(n - done.sum())


def simulate_total_discounted(model: LevyModel, policy, costs, alpha: float,
                              x: float, config: PathConfig,
                              reflected: bool = True,
                              discount_floor: float = 1e-5) -> SimulationEstimate:
    """Long-horizon estimate of the total discounted cost started at x.

    Paths run successive cycles until the discount factor falls below
    ``discount_floor``, so the truncated tail is bounded by the floor times
    the one-cycle cost scale.  Opening charges are paid when the valve
    opens, closing charges at each cycle start, matching the analytic
    convention.
    """
    if alpha <= 0:
        raise ValueError("needs alpha > 0")
    model = _prepare_model(model, config)
    if isinstance(model, CompoundPoissonDrift):
        totals = _total_discounted_cp(model, policy, costs, alpha, x, config,
                                      reflected, discount_floor)
    else:
        totals = _total_discounted_grid(model, policy, costs, alpha, x, config,
                                        reflected, discount_floor)
    return estimate(f"total_discounted:{alpha:g}", totals)


def _total_discounted_cp(model, policy, costs, alpha, x, config, reflected,
                         floor):
    lam, tau, V, M = policy.lam, policy.tau, policy.V, policy.M
    t_max = -math.log(floor) / alpha
    alphas = [0.0, alpha]
    totals = np.zeros(config.n_paths)
    for i in range(config.n_paths):
        rng = path_rng(config.seed, i)
        total, t, start = 0.0, 0.0, x
        while t < t_max:
            if start <= lam:
                fill = _cp_fill(model, rng, start, lam, config.horizon,
                                reflected, costs.g, alphas)
                if fill is None:
                    break
                t_fill, state, fill_ints = fill
                fixed = M * costs.K2 + M * costs.K1 * math.exp(-alpha * t_fill)
            else:
                t_fill, state, fill_ints = 0.0, start, {a: 0.0 for a in alphas}
                fixed = M * costs.K1
            rel = _cp_release(model, rng, state, tau, V, M, config.horizon,
                              costs.g_star, alphas, t_fill)
            if rel is None:
                break
            t_rel, rel_ints = rel
            ef = math.exp(-alpha * t_fill)
            ec = math.exp(-alpha * (t_fill + t_rel))
            cost = (fixed - costs.R * M * (ef - ec) / alpha
                    + fill_ints[alpha] + rel_ints[alpha])
            total += math.exp(-alpha * t) * cost
            t += t_fill + t_rel
            start = tau
        totals[i] = total
    return totals


def _total_discounted_grid(model, policy, costs, alpha, x, config, reflected,
                           floor):
    """Vectorised multi-cycle accumulation on a shared clock."""
    lam, tau, V, M = policy.lam, policy.tau, policy.V, policy.M
    n = config.n_paths
    dt = config.time_step
    rng = path_rng(config.seed, 0)
    is_bm = isinstance(model, BrownianDrift)
    creeps = is_bm and not model.has_jumps
    sig2 = model.sigma2 if is_bm else 0.0
    sig_dt = math.sqrt(sig2 * dt) if is_bm else 0.0
    g_vec = None if costs.g.is_zero else _vectorize_poly(costs.g)
    gs_vec = None if costs.g_star.is_zero else _vectorize_poly(costs.g_star)

    start = min(x, V)
    y = np.full(n, float(start))
    filling = np.full(n, start <= lam)
    totals = np.zeros(n)
    if start <= lam:
        totals += M * costs.K2
    else:
        totals += M * costs.K1

    t = 0.0
    t_max = -math.log(floor) / alpha
    steps = int(math.ceil(t_max / dt))
    for _ in range(steps):
        d0 = math.exp(-alpha * t)
        d1 = math.exp(-alpha * (t + dt))
        if is_bm:
            w = rng.normal(model.mu * dt, sig_dt, size=n)
            u_ext = rng.uniform(size=n)
            u_cross = rng.uniform(size=n)
            if model.has_jumps:
                cnt = rng.poisson(model.jump_rate * dt, size=n)
                for k in np.nonzero(cnt)[0]:
                    w[k] += model.jumps.sample(rng, cnt[k]).sum()
        else:
            w = _subordinator_increments(model, rng, dt, n) - model.zeta * dt
        w = np.where(filling, w, w - M * dt)

        if is_bm:
            root = np.sqrt(w * w - 2.0 * sig2 * dt * np.log(u_ext))
            ext = 0.5 * (w + np.where(filling, -root, root))
            y_pre = np.where(
                filling,
                y + w - (np.minimum(0.0, y + ext) if reflected else 0.0),
                y + w - np.maximum(0.0, y + ext - V))
            inert = np.where(filling, (y < lam) & (y_pre < lam),
                             (y > tau) & (y_pre > tau))
            gap = np.where(filling, (lam - y) * (lam - y_pre),
                           (y - tau) * (y_pre - tau))
            p = np.where(inert,
                         np.exp(-2.0 * np.maximum(gap, 0.0) / (sig2 * dt)), 0.0)
            hit = np.where(filling, y_pre >= lam, y_pre <= tau) | (u_cross < p)
            state_now = (np.full_like(y_pre, lam) if creeps
                         else np.where(y_pre >= lam, y_pre, lam))
        else:
            y_pre = np.where(filling,
                             np.maximum(y + w, 0.0) if reflected else y + w,
                             np.minimum(y + w, V))
            hit = np.where(filling, y_pre >= lam, y_pre <= tau)
            state_now = y_pre

        f = filling
        r = ~filling
        if g_vec is not None and f.any():
            totals[f] += 0.5 * dt * (d0 * g_vec(y[f])
                                     + d1 * g_vec(np.minimum(y_pre[f], lam)))
        if r.any():
            if gs_vec is not None:
                y_r = np.maximum(y_pre[r], tau)
                totals[r] += 0.5 * dt * (d0 * gs_vec(y[r]) + d1 * gs_vec(y_r))
            totals[r] -= costs.R * M * (d0 - d1) / alpha

        crossed = f & hit
        if crossed.any():
            # valve opens: pay the opening charge, cap, switch phase
            totals[crossed] += d1 * M * costs.K1
            y[crossed] = np.minimum(state_now[crossed], V)
            filling[crossed] = False
        closed = r & hit
        if closed.any():
            # cycle ends: pay the next closing charge, restart the fill
            totals[closed] += d1 * M * costs.K2
            y[closed] = tau
            filling[closed] = True
        rest = ~hit
        y[rest] = np.where(f[rest], y_pre[rest], np.maximum(y_pre[rest], tau))
        t += dt
    return totals


def _prepare_model(model: LevyModel, config: PathConfig) -> LevyModel:
    """Replace small jumps of a generic measure by their mean drift."""
    if not isinstance(model, GenericBoundedVariation):
        return model
    from .models import CompoundPoissonDrift as CPD

    cut = config.small_jump_cutoff
    measure = model.measure
    rate = float(measure.tail(cut))
    from scipy.integrate import quad
    small_mean, _ = quad(lambda v: v * measure.density(v), 0.0, cut,
                         epsabs=1e-12, epsrel=1e-10, limit=200)
    jumps = _TailSampler(measure, cut, rate)
    return CPD(model.zeta - small_mean, rate, jumps)


class _TailSampler:
    """Samples jump sizes above a cutoff via an inverse-tail quantile table."""

    def __init__(self, measure, cut, rate):
        hi = measure.tail_quantile(1e-12 * rate, hint=max(1.0, cut))
        xs = np.geomspace(cut, hi, 4096)
        tails = np.asarray(measure.tail(xs), dtype=float) / rate
        keep = np.concatenate(([True], np.diff(tails) < 0))
        self._q = np.flip(tails[keep])
        self._x = np.flip(xs[keep])
        self.mean = float(measure.mu)  # informational only

    def sample(self, rng, size):
        u = rng.uniform(size=size)
        return np.interp(u, self._q, self._x)
