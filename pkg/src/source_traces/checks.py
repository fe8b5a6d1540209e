"""Invariant suites run by ``source-traces check``.

Each suite takes a master seed and returns a list of :class:`Claim`.  ``all``
runs every suite under three distinct seeds.
"""

from __future__ import annotations

import time

import numpy as np
from scipy import stats

from .envs import (EnvSpec, Trajectory, derive_seed, grid_neighbors, make_env, sample_trajectory, stream)
from .errors import ConfigError
from .harness import aggregate, parse_config, records_csv, run_experiment
from .learners import Algorithm, Learner, LearnerConfig, LearnerState, step_source_learning
from .mrp import (Mrp, exact_source_map, exact_value, expected_td_error, full_expected_backup,
                  induced_inf_norm, norm_defect, partial_source_map, partial_trace_bound,
                  source_backup_reward_delta)
from .presets import PRESETS, Claim, evaluate, preset_configs
from .replay import ReplayMemory, replay_step
from .schedules import annealed, paper_grid, rate, rates
from .schedules import fixed as fixed_rate

LAMBDAS = (0.0, 0.25, 0.5, 0.75, 1.0)


def _random_mrps(seed, count, n=100, gamma=0.9):
    return [make_env(EnvSpec("random_mrp", gamma, seed=derive_seed(seed, "env", k), num_states=n))
            for k in range(count)]


def _gridworlds(seed, count, dims=(5, 5, 5), gamma=0.95):
    return [make_env(EnvSpec("gridworld3d", gamma, seed=derive_seed(seed, "env", 1000 + k), dims=dims,
                             num_reward_states=6)) for k in range(count)]


def neumann_source_map(mrp: Mrp, tol: float = 1e-12) -> np.ndarray:
    """Truncated series sum_k (gamma P)^k with tail gamma^K < tol."""
    n = mrp.num_states
    g = mrp.gamma
    terms = 1 if g == 0 else int(np.ceil(np.log(tol) / np.log(g))) + 1
    gp = g * np.asarray(mrp.transition)
    total = np.eye(n)
    term = np.eye(n)
    for _ in range(terms):
        term = term @ gp
        total += term
    return total


def counterexample() -> Mrp:
    return Mrp(np.full((2, 2), 0.5), np.zeros(2), 0.5)


# -- mrp-core -------------------------------------------------------------------------


def check_mrp(seed: int) -> list[Claim]:
    envs = _random_mrps(seed, 10) + _gridworlds(seed, 3)
    rng = stream(seed, "noise", 99)
    worst_sweep = worst_neumann = 0.0
    bound_ok = True
    for mrp in envs:
        sm = exact_source_map(mrp)
        v_star = exact_value(mrp)
        for _ in range(20):
            v0 = rng.standard_normal(mrp.num_states) * 10
            worst_sweep = max(worst_sweep, float(np.max(np.abs(full_expected_backup(mrp, sm, v0) - v_star))))
        worst_neumann = max(worst_neumann, float(np.linalg.norm(sm.matrix - neumann_source_map(mrp))))
        bound_ok &= induced_inf_norm(sm.matrix) <= 1.0 / (1.0 - mrp.gamma) + 1e-9
    claims = [
        Claim("one-sweep exactness", worst_sweep <= 1e-8, f"max |error| {worst_sweep:.3g}"),
        Claim("Neumann series equivalence", worst_neumann <= 1e-8, f"max Frobenius gap {worst_neumann:.3g}"),
        Claim("source map inf-norm bound 1/(1-gamma)", bool(bound_ok), f"{len(envs)} environments"),
    ]
    worst = -np.inf
    for mrp in _random_mrps(seed, 10):
        for n in range(1, 9):
            for lam in LAMBDAS:
                d = norm_defect(mrp, partial_source_map(mrp, n, lam)) - partial_trace_bound(mrp.gamma, n, lam)
                worst = max(worst, d)
    claims.append(Claim("partial-map defect within its bound", worst <= 1e-10, f"max excess {worst:.3g}"))
    mono = True
    for gamma in (0.5, 0.9, 0.95):
        b = np.array([[partial_trace_bound(gamma, n, lam) for lam in LAMBDAS] for n in range(1, 9)])
        mono &= bool(np.all(np.diff(b, axis=0) <= 1e-15) and np.all(np.diff(b, axis=1) <= 1e-15))
    claims.append(Claim("partial-map bound non-increasing in n and lambda", mono, "gamma in {0.5, 0.9, 0.95}"))
    mrp = counterexample()
    state = LearnerState.new("source", 2, source_map=exact_source_map(mrp))
    state.v[:] = [1.0, -1.0]
    step_source_learning(state, (0, 0.0, 0), 1.0, exact_source_map(mrp), mrp.gamma,
                         td_error=expected_td_error(mrp, np.array([1.0, -1.0]))[0])
    ok = np.allclose(state.v, [-0.5, -1.5], rtol=0, atol=1e-12) and abs(state.v[1]) > 1.0
    claims.append(Claim("asynchronous source backup can expand the error", bool(ok), f"v1={state.v.tolist()}"))
    worst = 0.0
    base = envs[0]
    v0 = exact_value(base)
    s0 = exact_source_map(base)
    for _ in range(20):
        j = int(rng.integers(base.num_states))
        dr = float(rng.standard_normal())
        new_r = base.reward.copy()
        new_r[j] += dr
        diff = source_backup_reward_delta(v0, s0, j, dr) - exact_value(base.with_reward(new_r))
        worst = max(worst, float(np.max(np.abs(diff))))
    claims.append(Claim("rank-one reward change matches re-solve", worst <= 1e-9, f"max |error| {worst:.3g}"))
    return claims


# -- envs ----------------------------------------------------------------------------


def check_envs(seed: int) -> list[Claim]:
    mrps = _random_mrps(seed, 5)
    grids = _gridworlds(seed, 3) + _gridworlds(seed + 1, 1, dims=(2, 3, 4))
    rows_ok = all(np.max(np.abs(m.transition.sum(axis=1) - 1.0)) <= 1e-12 for m in mrps + grids)
    local = True
    for g, dims in zip(grids, [(5, 5, 5)] * 3 + [(2, 3, 4)]):
        for i in range(g.num_states):
            allowed = set(grid_neighbors(i, dims))
            local &= set(np.flatnonzero(g.transition[i]).tolist()) <= allowed
    spec = EnvSpec("random_mrp", 0.9, seed=seed)
    a, b = make_env(spec), make_env(spec)
    ta = sample_trajectory(a, 1000, stream(seed, "trajectory"))
    tb = sample_trajectory(b, 1000, stream(seed, "trajectory"))
    same = (np.array_equal(a.transition, b.transition) and np.array_equal(a.reward, b.reward)
            and np.array_equal(ta.states, tb.states))
    # chi-square of observed transition counts against P, pooled over states
    mrp = mrps[0]
    traj = sample_trajectory(mrp, 100_000, stream(seed, "trajectory", 7))
    counts = np.zeros((mrp.num_states, mrp.num_states))
    np.add.at(counts, (traj.states[:-1], traj.states[1:]), 1.0)
    chi2, dof = 0.0, 0
    for i in range(mrp.num_states):
        nz = mrp.transition[i] > 0
        tot = counts[i].sum()
        if tot == 0:
            continue
        expected = tot * mrp.transition[i, nz]
        chi2 += float(np.sum((counts[i, nz] - expected) ** 2 / expected))
        dof += int(nz.sum()) - 1
        if np.any(counts[i, ~nz] > 0):
            chi2 = np.inf
    p = float(stats.chi2.sf(chi2, dof))
    return [
        Claim("generated transition rows sum to 1", bool(rows_ok), f"{len(mrps) + len(grids)} environments"),
        Claim("gridworld moves only to toroidal neighbours", bool(local), "including a 2x3x4 torus"),
        Claim("generation and sampling are seed-deterministic", bool(same), "two builds compared"),
        Claim("empirical transition frequencies match P", p > 1e-3, f"chi2={chi2:.1f}, dof={dof}, p={p:.3g}"),
    ]


# -- schedules -----------------------------------------------------------------------


def check_schedules(seed: int) -> list[Claim]:
    sched = annealed(1.0, 0.0)
    total, sq = 0.0, 0.0
    chunk = 1_000_000
    for start in range(1, 10_000_001, chunk):
        a = rates(sched, np.arange(start, start + chunk))
        total += float(a.sum())
        if start > 1_000_000:
            sq += float(np.sum(a * a))
    # tail of sum a^2 beyond 1e7 bounded by the integral of x^-2.2
    sq += 1e7 ** -1.2 / 1.2
    mono = True
    pts = np.unique(np.geomspace(1, 1e8, 400).astype(np.int64))
    for s in paper_grid():
        mono &= bool(np.all(np.diff(rates(s, pts)) <= 0))
    return [
        Claim("annealed rates sum past 100 a0 within 1e7 steps (N0=0)", total > 100.0,
              f"sum of a_n / a0 over n <= 1e7 is {total:.4f}"),
        Claim("annealed squared-rate tail beyond 1e6 below 1e-3", sq < 1e-3, f"tail {sq:.3g}"),
        Claim("every grid schedule is non-increasing", mono, f"{len(paper_grid())} schedules"),
    ]


# -- learners ------------------------------------------------------------------------

_DIRECT = ("source", "td_source", "td_sr", "td_source_sr", "white", "prd")


def _reduction_gap(mrp, traj, algorithm, alpha=0.1):
    td = Learner(LearnerConfig("td0", alpha=fixed_rate(alpha)), mrp.num_states, mrp.gamma)
    kw = {"source": "partial:1:1"} if algorithm == "source" else {}
    cfg = LearnerConfig(algorithm, alpha=fixed_rate(alpha), lam=0.0, **kw)
    sm = partial_source_map(mrp, 1) if algorithm == "source" else None
    other = Learner(cfg, mrp.num_states, mrp.gamma, source_map=sm)
    worst = 0.0
    for t in traj:
        td.step(t)
        other.step(t)
        worst = max(worst, float(np.max(np.abs(td.value_estimate() - other.value_estimate()))))
    return worst


def _time_per_step(algorithm, dims, steps=4000, seed=0):
    mrp = make_env(EnvSpec("gridworld3d", 0.95, seed=seed, dims=dims, num_reward_states=1))
    traj = sample_trajectory(mrp, steps, stream(seed, "trajectory"))
    kw = {"source": "exact"} if algorithm == "source" else {}
    cfg = LearnerConfig(algorithm, alpha=fixed_rate(0.001), **kw)
    sm = np.eye(mrp.num_states) if algorithm == "source" else None
    v_star = exact_value(mrp)
    best = np.inf
    for _ in range(3):
        lr = Learner(cfg, mrp.num_states, mrp.gamma, source_map=sm, rng=stream(seed, "ilstd"))
        t0 = time.perf_counter()
        lr.run(traj, [steps], v_star)
        best = min(best, time.perf_counter() - t0)
    return best / steps


def scaling_exponents(seed: int = 0) -> dict[str, float]:
    """log(t_1000 / t_125) / log 8 for the per-step time of each learner."""
    out = {}
    for algo in Algorithm:
        _time_per_step(algo.value, (2, 2, 2))  # compile outside the timed region
        small = _time_per_step(algo.value, (5, 5, 5), seed=seed)
        big = _time_per_step(algo.value, (10, 10, 10), seed=seed)
        out[algo.value] = float(np.log(big / small) / np.log(8.0))
    return out


def _converges(mrp, algorithm, schedules, horizon, seed, chunk=50_000):
    """First schedule under which the learner gets within tolerance, else None."""
    v_star = exact_value(mrp)
    tol = 0.05 * (1.0 + np.max(np.abs(v_star)))
    traj = sample_trajectory(mrp, horizon, stream(seed, "trajectory", 11))
    kw = {"source": "exact"} if algorithm == "source" else {}
    sm = exact_source_map(mrp) if algorithm == "source" else None
    lam = 0.5 if algorithm == "td_lambda" else 1.0
    for sched in schedules:
        cfg = LearnerConfig(algorithm, alpha=sched, lam=lam, **kw)
        lr = Learner(cfg, mrp.num_states, mrp.gamma, source_map=sm, rng=stream(seed, "ilstd", 11))
        for start in range(0, horizon, chunk):
            piece = Trajectory(traj.states[start:start + chunk + 1], traj.rewards[start:start + chunk])
            _, _, div = lr.run(piece, [len(piece)], v_star)
            if div is not None:
                break
            if np.max(np.abs(lr.value_estimate() - v_star)) < tol:
                return str(sched), start + len(piece)
    return None


def check_learners(seed: int, timing: bool = True) -> list[Claim]:
    claims = []
    mrp = _random_mrps(seed, 1, n=20)[0]
    traj = sample_trajectory(mrp, 2000, stream(seed, "trajectory"))
    gaps = {a: _reduction_gap(mrp, traj, a) for a in _DIRECT}
    claims.append(Claim("lambda=0 / identity map reduces every direct learner to TD(0)",
                        max(gaps.values()) <= 1e-12, f"max gap {max(gaps.values()):.3g}"))
    mrp50 = _random_mrps(seed, 1, n=50)[0]
    sm = exact_source_map(mrp50)
    traj = sample_trajectory(mrp50, 10_000, stream(seed, "trajectory", 1))
    src = Learner(LearnerConfig("source", alpha=fixed_rate(0.05), source="exact"), 50, mrp50.gamma, source_map=sm)
    wh = Learner(LearnerConfig("white", alpha=fixed_rate(0.05), model="fixed", source="exact"), 50,
                 mrp50.gamma, source_map=sm)
    worst = 0.0
    for t in traj:
        src.step(t)
        wh.step(t)
        worst = max(worst, float(np.max(np.abs(src.state.v - sm.matrix @ wh.state.theta))))
    claims.append(Claim("source learning equals White's algorithm under a fixed map", worst <= 1e-10,
                        f"max gap {worst:.3g} over 1e4 steps"))
    cm = counterexample()
    st = LearnerState.new("source", 2, source_map=exact_source_map(cm))
    st.v[:] = [1.0, -1.0]
    step_source_learning(st, (0, 0.0, 0), 1.0, exact_source_map(cm), 0.5, td_error=-1.0)
    claims.append(Claim("two-state expansion reproduced", st.v.tolist() == [-0.5, -1.5], f"v1={st.v.tolist()}"))
    rng = stream(seed, "noise", 5)
    diag_ok = True
    for algo in ("td_source", "td_sr", "td_source_sr"):
        for _ in range(50):
            n = int(rng.integers(2, 12))
            i, j = int(rng.integers(n)), int(rng.integers(n))
            beta = float(rng.random())
            lr = Learner(LearnerConfig(algo, beta=fixed_rate(max(beta, 1e-6)), lam=float(rng.random())),
                         n, float(rng.random() * 0.99))
            lr.step((i, 0.0, j))
            diag_ok &= bool(np.all(np.diag(lr.state.s0) >= 1.0 - max(beta, 1e-6) - 1e-12))
    claims.append(Claim("learned maps keep diagonals >= 1 - beta after one update", diag_ok, "150 random updates"))
    if timing:
        exps = scaling_exponents(seed)
        worst_algo = max(exps, key=exps.get)
        claims.append(Claim("per-step cost linear in |S| (exponent < 1.3)", exps[worst_algo] < 1.3,
                            ", ".join(f"{a}={e:.2f}" for a, e in exps.items())))
    small = make_env(EnvSpec("random_mrp", 0.9, seed=derive_seed(seed, "env", 77), num_states=10, out_degree=5))
    grid = paper_grid()
    failed = []
    for algo in Algorithm:
        if _converges(small, algo.value, grid, 1_000_000, seed) is None:
            failed.append(algo.value)
    claims.append(Claim("every learner converges on a 10-state MRP at some grid schedule", not failed,
                        "failed: " + ", ".join(failed) if failed else f"{len(Algorithm)} learners"))
    return claims


# -- replay --------------------------------------------------------------------------


def check_replay(seed: int) -> list[Claim]:
    try:
        LearnerConfig("td_lambda", lam=0.5, replay=3)
        rejected = False
    except ConfigError:
        rejected = True
    mrp = _random_mrps(seed, 1, n=20)[0]
    traj = sample_trajectory(mrp, 300, stream(seed, "trajectory"))
    cfg = LearnerConfig("td_source_sr", alpha=fixed_rate(0.1), replay_learns_model=False)
    lr = Learner(cfg, 20, mrp.gamma)
    mem = ReplayMemory()
    for t in traj:
        mem.push(t)
        lr.step(t)
    rng = stream(seed, "replay")
    probe = np.random.Generator(np.random.PCG64(0))
    probe.bit_generator.state = rng.bit_generator.state
    i, r, j = mem.sample(probe)
    expected = lr.state.v + 0.1 * (r + mrp.gamma * lr.state.v[j] - lr.state.v[i]) * lr.state.s0[:, i]
    steps_before = lr.step_count
    replay_step(mem, lr, 1, rng)
    local = np.allclose(lr.state.v, expected, rtol=0, atol=1e-12)
    counted = lr.step_count == steps_before
    mem = ReplayMemory()
    for k in range(10):
        mem.push((k, 0.0, k))
    draws = np.array([mem.sample(rng)[0] for _ in range(100_000)])
    freq = np.bincount(draws, minlength=10) / draws.size
    return [
        Claim("eligibility-trace learners reject replay", rejected, "td_lambda with replay=3"),
        Claim("replayed source update uses only the current source trace", bool(local), "one replayed step"),
        Claim("replayed updates do not advance the real-step count", bool(counted), f"{lr.step_count} real steps"),
        Claim("replay sampling is uniform", bool(np.all((freq >= 0.08) & (freq <= 0.12))),
              f"frequencies in [{freq.min():.4f}, {freq.max():.4f}]"),
    ]


# -- harness -------------------------------------------------------------------------

_HARNESS_CFG = """name = check
env = random_mrp
num_states = 30
gamma = 0.9
batch = 3
seed = {seed}
horizon = 3000
checkpoint_every = 250
learner = a td0 alpha=fixed:0.1,fixed:0.02
learner = b td0 alpha=fixed:0.1,fixed:0.02
learner = c td_source_sr alpha=fixed:0.05 replay=2 s_error=yes
"""


def check_harness(seed: int, presets: bool = True) -> list[Claim]:
    cfg = parse_config(_HARNESS_CFG.format(seed=seed))
    r1 = run_experiment(cfg)
    r2 = run_experiment(cfg, workers=2)
    same = records_csv(r1.records) == records_csv(r2.records)
    by = {(r.learner_id, r.config_id, r.env_index): r for r in r1.records}
    shared = all(np.array_equal(by[("a", c, e)].value_error, by[("b", c, e)].value_error)
                 for (lid, c, e) in by if lid == "a")
    worst = 0.0
    for cv in aggregate(r1.records):
        group = [r.value_error for r in r1.records if (r.learner_id, r.config_id) == (cv.learner_id, cv.config_id)]
        worst = max(worst, float(np.max(np.abs(cv.value_error - sum(group) / len(group)))))
    mono = all(np.all(np.diff(r.steps) > 0) and r.steps[-1] <= cfg.horizon and r.steps[-1] == cfg.horizon
               for r in r1.records)
    claims = [
        Claim("identical runs across worker counts", same, f"{len(r1.records)} records"),
        Claim("learners share the transition stream", shared, "duplicate learner ids agree"),
        Claim("batch mean equals the mean of per-environment errors", worst <= 1e-12, f"max gap {worst:.3g}"),
        Claim("checkpoints increase and stop at the horizon", bool(mono), f"{len(cfg.checkpoints())} checkpoints"),
    ]
    if presets:
        for name in PRESETS:
            results = [run_experiment(c) for c in preset_configs(name, "desk", seed)]
            for c in evaluate(name, results, "desk"):
                if "informational" in c.name:
                    continue
                claims.append(Claim(f"desk {name}: {c.name}", c.passed, c.detail))
    return claims


# -- cli -----------------------------------------------------------------------------


def check_cli(seed: int) -> list[Claim]:
    from .cli import reproduce_preset

    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as tmp:
        a = reproduce_preset("fig3", "desk", seed, Path(tmp) / "a", quiet=True)
        b = reproduce_preset("fig3", "desk", seed, Path(tmp) / "b", quiet=True)
        same = all((Path(tmp) / "a" / p.name).read_bytes() == (Path(tmp) / "b" / p.name).read_bytes()
                   for p in (Path(tmp) / "a").iterdir())
        mrp = make_env(EnvSpec("gridworld3d", 0.95, seed=seed, dims=(3, 3, 3), num_reward_states=4))
        path = Path(tmp) / "env.mrp"
        mrp.save(path)
        back = Mrp.load(path)
        rt = np.array_equal(back.transition, mrp.transition) and np.array_equal(back.reward, mrp.reward)
    return [
        Claim("a preset run is reproducible from its seed", bool(same and a is not None and b is not None),
              "fig3 desk CSVs compared byte for byte"),
        Claim("environment files round-trip", bool(rt), "3x3x3 gridworld"),
    ]


SUITES = {
    "mrp": check_mrp,
    "envs": check_envs,
    "schedules": check_schedules,
    "learners": check_learners,
    "replay": check_replay,
    "harness": check_harness,
    "cli": check_cli,
}


def run_suites(names, seeds):
    """Yield ``(suite, seed, claim)`` as each suite finishes."""
    for seed in seeds:
        for name in names:
            for claim in SUITES[name](seed):
                yield name, seed, claim
