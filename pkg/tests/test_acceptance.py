"""End-to-end acceptance criteria.

Each test prints one ``criterion N: PASS|FAIL`` line (collected again in
the terminal summary) and then asserts.  Wall-clock budgets are part of
each criterion.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy import stats

from tcnn import cli, darcy
from tcnn import environments as envs
from tcnn import likelihoods as lk
from tcnn import neural_net as nn
from tcnn import priors as pr
from tcnn import samplers as sm
from tcnn.core_math import DiagonalGaussian, make_rng

pytestmark = pytest.mark.acceptance


def write_cfg(tmp_path, name, **changes):
    cfg = cli.load_config(name).to_dict()
    for k, v in changes.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    return str(path)


# --------------------------------------------------------------------------
# 1. likelihood correctness

def mc_action_prob(v, best, sigma, rng, n=1_000_000, chunk=250_000):
    """Fraction of draws in which ``best`` maximizes ``v + sigma * eps``."""
    wins = 0
    for s in range(0, n, chunk):
        eps = rng.standard_normal((min(chunk, n - s), v.size))
        wins += int(np.sum(np.argmax(v + sigma * eps, axis=1) == best))
    return wins / n


def test_criterion_1_likelihood(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst2 = 0.0
    for _ in range(1000):
        sigma = rng.uniform(0.05, 1.0)
        v = rng.normal(scale=0.5, size=2)
        best = int(rng.integers(2))
        other = 1 - best
        exact = stats.norm.cdf((v[best] - v[other]) / (math.sqrt(2) * sigma))
        worst2 = max(worst2, abs(lk.action_prob(v, best, sigma) - exact))

    mc_rng = make_rng(102, "mc-oracle")
    inside = 0
    cases = 0
    for M in (3, 8):
        for _ in range(100):
            sigma = rng.uniform(0.05, 1.0)
            v = rng.normal(scale=sigma, size=M)
            best = int(rng.integers(M))
            p = lk.action_prob(v, best, sigma)
            phat = mc_action_prob(v, best, sigma, mc_rng)
            se = math.sqrt(p * (1 - p) / 1_000_000)
            inside += abs(phat - p) <= 3 * se
            cases += 1
    frac = inside / cases
    elapsed = time.perf_counter() - t0
    ok = worst2 <= 1e-8 and frac >= 0.99 and elapsed < 60
    report(1, ok, f"M=2 max err {worst2:.2e} (<=1e-8); MC within 3 SE {inside}/{cases} (>=99%); {elapsed:.0f}s (<60s)")
    assert ok


# --------------------------------------------------------------------------
# 2. gradient correctness

def fd_prob_grad(v, best, sigma, h=1e-6):
    g = np.empty(v.size)
    for k in range(v.size):
        e = np.zeros_like(v)
        e[k] = h
        g[k] = (lk.action_prob(v + e, best, sigma) - lk.action_prob(v - e, best, sigma)) / (2 * h)
    return g


def test_criterion_2_gradients(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(201)
    worst_prob = 0.0
    for _ in range(500):
        M = int(rng.integers(2, 9))
        sigma = rng.uniform(0.05, 1.0)
        v = rng.normal(scale=sigma, size=M)
        best = int(rng.integers(M))
        g = lk.action_prob_grad(v, best, sigma)
        fd = fd_prob_grad(v, best, sigma, h=1e-6 * sigma)
        worst_prob = max(worst_prob, np.max(np.abs(g - fd)) / np.max(np.abs(fd)))

    env = envs.MountainCar()
    ds = envs.generate_action_dataset(env, envs.mc_expert_action, envs.DataProtocol(), make_rng(202, "data"))
    aug = pr.Augmentation("box", env.low, env.high)
    worst_nn = 0.0
    for case in range(20):
        widths = [int(w) for w in rng.integers(2, 9, size=int(rng.integers(1, 4)))]
        layout = pr.build_tcnn(widths, 2, 1.5, 2.0, 2.0)
        cfg = lk.ActionLikelihoodConfig(sigma=float(rng.uniform(0.1, 1.0)), stabilization="none")
        lik = lk.ActionLikelihood(ds, pr.make_evaluator(layout, aug), cfg)
        p = pr.prior_sample(layout, rng)
        _, g = lik.value_and_grad(p)
        idx = rng.choice(layout.n_params, min(25, layout.n_params), replace=False)
        fd = np.empty(idx.size)
        for j, k in enumerate(idx):
            h = 1e-6 * (1 + abs(p[k]))
            e = np.zeros_like(p)
            e[k] = h
            fd[j] = (lik(p + e) - lik(p - e)) / (2 * h)
        worst_nn = max(worst_nn, np.max(np.abs(g[idx] - fd)) / max(np.max(np.abs(fd)), 1e-12))
    elapsed = time.perf_counter() - t0
    ok = worst_prob <= 1e-5 and worst_nn <= 1e-4 and elapsed < 120
    report(2, ok, f"prob-grad max rel err {worst_prob:.2e} (<=1e-5); NN loglik-grad max rel err {worst_nn:.2e} "
                  f"(<=1e-4); {elapsed:.0f}s (<120s)")
    assert ok


# --------------------------------------------------------------------------
# 3. prior moment bounds

def test_criterion_3_moment_bounds(report):
    t0 = time.perf_counter()
    n_draws = 10_000
    layout = pr.build_tcnn([50, 50, 50], 2, 1.5, 2.0, 2.0)
    rng = make_rng(301, "moments")
    X = rng.uniform(size=(10, 2))
    Y = rng.uniform(size=(10, 2))
    probe = [0, 4, 24]  # i = 1, 5, 25
    n_layers = layout.shape.n_layers
    sq = [np.zeros((10, min(len(probe), layout.shape.sizes[l]))) for l in range(1, n_layers + 1)]
    inc = [np.zeros_like(a) for a in sq]
    chunk = 500
    XY = np.vstack([X, Y])
    for s in range(0, n_draws, chunk):
        P = pr.prior_sample(layout, rng, chunk)
        for p in P:
            pre = pr.layer_outputs(layout, p, XY)
            for l, f in enumerate(pre):
                cols = probe[: sq[l].shape[1]]
                fx, fy = f[:10, cols], f[10:, cols]
                sq[l] += fx * fx
                inc[l] += (fx - fy) ** 2
    slack = 5 / math.sqrt(n_draws)
    worst_m = worst_i = -np.inf
    for l in range(n_layers):
        cols = probe[: sq[l].shape[1]]
        for k in range(10):
            bound = pr.tcnn_moment_bounds(layout, X[k])[l][cols]
            worst_m = max(worst_m, np.max(sq[l][k] / n_draws / bound - 1))
        c = pr.tcnn_increment_bounds(layout)[l][cols]
        d2 = np.sum((X - Y) ** 2, axis=1)[:, None]
        worst_i = max(worst_i, np.max(inc[l] / n_draws / (c[None, :] * d2) - 1))
    elapsed = time.perf_counter() - t0
    ok = worst_m <= slack and worst_i <= slack and elapsed < 180
    report(3, ok, f"max relative excess over moment bound {worst_m:+.4f}, over increment bound {worst_i:+.4f} "
                  f"(<= {slack}); {elapsed:.0f}s (<180s)")
    assert ok


# --------------------------------------------------------------------------
# 4. sampler invariance

def zero_loglik(p):
    return 0.0


class ZeroGrad:
    def __call__(self, p):
        return 0.0

    def value_and_grad(self, p):
        return 0.0, np.zeros_like(p)


class GaussToy:
    """``y = u + noise`` observed once per coordinate."""

    def __init__(self, m, s2):
        self.m, self.s2 = m, s2

    def __call__(self, u):
        return -0.5 * float(np.sum((u - self.m) ** 2)) / self.s2

    def value_and_grad(self, u):
        return self(u), -(u - self.m) / self.s2


def variance_tests(samples, var, probes, lag):
    """Known-mean chi-square variance tests at level 99% on lag-thinned samples."""
    x = samples[::lag][:, probes] / np.sqrt(var[probes])
    n = x.shape[0]
    stat = np.sum(x * x, axis=0)
    lo, hi = stats.chi2.ppf([0.005, 0.995], n)
    return (stat >= lo) & (stat <= hi)


def test_criterion_4_sampler_invariance(report):
    t0 = time.perf_counter()
    layout = pr.build_tcnn([10, 10], 2, 1.5, 2.0, 2.0)
    var = layout.variances
    probes = make_rng(401, "probes").choice(layout.n_params, 20, replace=False)
    details, ok = [], True
    for kind, kw, rho in (("pcn", {"beta": 0.5}, math.sqrt(0.75)), ("pcnl", {"delta": 0.5}, 1.5 / 2.5)):
        cfg = sm.SamplerConfig(kind=kind, n_iter=100_000, thin=1, seed=402, **kw)
        out = sm.run_chain(cfg, layout, ZeroGrad() if kind == "pcnl" else zero_loglik)
        all_acc = out.summary["rates"][kind] == 1.0
        lag = int(math.ceil(math.log(1e-3) / math.log(rho)))
        passed = variance_tests(out.samples, var, probes, lag)
        ok &= bool(all_acc and passed.all())
        details.append(f"{kind}: accept-all {all_acc}, chi2 {int(passed.sum())}/20")

    m, lam2, s2 = np.array([1.0, -2.0]), np.array([1.0, 0.5]), 0.3
    cfg = sm.SamplerConfig(kind="pcnl", delta=0.5, n_iter=100_000, thin=1, seed=403)
    out = sm.run_chain(cfg, DiagonalGaussian(lam2), GaussToy(m, s2))
    S = out.samples[1000:]
    post = lam2 * m / (lam2 + s2)
    se = np.array([sm.batch_means_se(S[:, k]) for k in range(2)])
    within = np.abs(S.mean(axis=0) - post) <= 3 * se
    ok &= bool(within.all())
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    details.append(f"conjugate mean err {np.abs(S.mean(axis=0) - post).round(4).tolist()} vs 3SE "
                   f"{(3 * se).round(4).tolist()}; {elapsed:.0f}s (<300s)")
    report(4, ok, "; ".join(details))
    assert ok


# --------------------------------------------------------------------------
# 5. width sweep (trace-class prior stable, BNN degrades)

@pytest.fixture(scope="module")
def width_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    t0 = time.perf_counter()
    cfg = cli.load_config("width_sweep")
    cfg.widths = [10, 50, 100]
    cfg.sampler = sm.SamplerConfig(kind="pcn", beta=0.1, n_iter=20_000, thin=20_000)
    cfg.beta_bnn = 1.0 / 7.0
    cfg.bnn_scaling = "fan_in"
    rows = cli.cmd_width_sweep(cfg, out)["rows"]
    return rows, time.perf_counter() - t0


def test_criterion_5a_tcnn_width_stability(width_sweep, report):
    rows, elapsed = width_sweep
    acc = {r["width"]: r["acceptance_pct"] for r in rows if r["prior"] == "tcnn"}
    vals = np.array([acc[w] for w in (10, 50, 100)])
    spread = vals.max() - vals.min()
    ok = bool(np.all((vals >= 12) & (vals <= 38)) and spread <= 12 and elapsed < 1800)
    report("5a", ok, f"tcNN acceptance % at widths 10/50/100 = {np.round(vals, 2).tolist()} (each in [12, 38]), "
                     f"spread {spread:.2f} (<=12); sweep {elapsed:.0f}s (<1800s)")
    assert ok


def test_criterion_5b_bnn_width_degradation(width_sweep, report):
    rows, elapsed = width_sweep
    acc = {r["width"]: r["acceptance_pct"] for r in rows if r["prior"] == "bnn"}
    ok = acc[100] <= 0.5 * acc[10] and elapsed < 1800
    report("5b", ok, f"BNN (fan-in, beta=1/7) acceptance % width 10 = {acc[10]:.2f}, width 100 = {acc[100]:.2f} "
                     f"(need width-100 <= half of width-10)")
    assert ok


# --------------------------------------------------------------------------
# 6. Darcy solver properties and posterior-predictive coverage

def test_criterion_6_darcy(tmp_path, report):
    t0 = time.perf_counter()
    sym = 0.0
    for n in (10, 20, 40):
        P = darcy.darcy_solve(np.zeros((n + 1, n + 1)), darcy.Grid2D(n)).values
        sym = max(sym, np.max(np.abs(P[::-1, ::-1] - P)), np.max(np.abs(P[::-1, :] - (1 - P))))

    layout = pr.build_kl_cosine_2d((8, 8))
    ev = pr.make_evaluator(layout)
    g = darcy.Grid2D(20)
    rng = make_rng(601, "fields")
    maxp = 0
    for _ in range(100):
        u = ev(pr.prior_sample(layout, rng) * 3.0, g.nodes()).reshape(21, 21)
        P = darcy.darcy_solve(u, g).values
        maxp += bool(P.min() >= -1e-10 and P.max() <= 1 + 1e-10)

    def smooth(X):
        return 0.8 * np.sin(2 * np.pi * X[:, 0]) * np.cos(np.pi * X[:, 1]) + 0.5 * X[:, 1]

    sol = {n: darcy.darcy_solve(darcy.field_from_function(smooth, darcy.Grid2D(n)), darcy.Grid2D(n),
                                method="banded").values for n in (20, 40, 80)}
    d1 = np.sqrt(np.mean((sol[20] - sol[40][::2, ::2]) ** 2))
    d2 = np.sqrt(np.mean((sol[40][::2, ::2] - sol[80][::4, ::4]) ** 2))
    rate = math.log2(d1 / d2)

    path = write_cfg(tmp_path, "darcy_posterior", plots=False)
    assert cli.main(["posterior", "--config", path, "--out", str(tmp_path / "run")]) == 0
    _, ppc = cli.read_csv(tmp_path / "run" / "ppc.csv")
    coverage = ppc[:, 7].mean()
    elapsed = time.perf_counter() - t0
    ok = sym <= 1e-8 and maxp == 100 and rate >= 1.7 and coverage >= 0.9 and elapsed < 1200
    report(6, ok, f"symmetry residual {sym:.1e} (<=1e-8); max principle {maxp}/100; refinement rate {rate:.2f} "
                  f"(>=1.7); 95% PPC coverage {coverage:.3f} (>=0.9); {elapsed:.0f}s (<1200s)")
    assert ok


# --------------------------------------------------------------------------
# 7. policy learning

def test_criterion_7_policy(tmp_path, report):
    t0 = time.perf_counter()
    post_cfg = write_cfg(tmp_path, "mountaincar_posterior", plots=False)
    run = tmp_path / "post"
    assert cli.main(["posterior", "--config", post_cfg, "--out", str(run)]) == 0
    n_stored = np.load(run / "samples.npy").shape[0]
    eval_cfg = write_cfg(tmp_path, "policy_eval", samples=str(run), plots=False)
    assert cli.main(["policy-eval", "--config", eval_cfg, "--out", str(tmp_path / "eval")]) == 0
    _, ep = cli.read_csv(tmp_path / "eval" / "episodes.csv")
    k_post = int((ep[:, 4] == 0).sum())
    k_base = int((ep[:, 8] == 0).sum())
    k_expert = int((ep[:, 6] == 0).sum())
    p_base = k_base / len(ep)
    pval = stats.binomtest(k_post, len(ep), p_base, alternative="less").pvalue if p_base > 0 else 1.0
    elapsed = time.perf_counter() - t0
    ok = n_stored == 1000 and len(ep) == 100 and k_post <= 60 and k_post < k_base and pval < 0.05 and elapsed < 2400
    report(7, ok, f"{n_stored} stored samples; failures posterior mean {k_post}/100 (<=60), fresh prior draw "
                  f"{k_base}/100, expert {k_expert}/100; one-sided binomial p={pval:.2e} (<0.05); "
                  f"{elapsed:.0f}s (<2400s)")
    assert ok


# --------------------------------------------------------------------------
# 8. NodeSwap

def test_criterion_8_nodeswap(report):
    t0 = time.perf_counter()
    checks = []
    layout = pr.build_tcnn([5, 5], 2, 1.5, 2.0, 2.0)
    shape = layout.shape
    rng = make_rng(801, "swap")
    X = rng.uniform(size=(20, 2))
    inv = outv = True
    for _ in range(200):
        p = pr.prior_sample(layout, rng)
        l = int(rng.integers(1, shape.n_layers))
        i = int(rng.integers(1, shape.sizes[l]))
        q = nn.swap_nodes(shape, p, l, i)
        inv &= np.array_equal(nn.swap_nodes(shape, q, l, i), p)
        perm = nn.swap_permutation(shape, l, i, i + 1)
        inv &= np.array_equal(perm[perm], np.arange(perm.size))
        outv &= np.allclose(nn.forward_batch(shape, q, X), nn.forward_batch(shape, p, X), rtol=0, atol=1e-13)
    flat = pr.build_tcnn([5, 5], 2, 0.0, 1.0, 1.0)
    state = sm.ChainState(pr.prior_sample(flat, rng), -1.0)
    always = True
    for _ in range(500):
        state, rec = sm.nodeswap_step(state, flat, rng)
        always &= rec.accepted
    checks += [f"involution {inv}", f"output invariance {outv}", f"alpha=0 always accepts {always}"]

    env = envs.MountainCar()
    ds = envs.generate_action_dataset(env, envs.mc_expert_action, envs.DataProtocol(), make_rng(0, "data"))
    small = pr.build_tcnn([2, 2], 2, 1.5, 2.0, 2.0)
    lik = lk.ActionLikelihood(ds, pr.make_evaluator(small, pr.Augmentation("box", env.low, env.high)),
                              lk.ActionLikelihoodConfig(sigma=0.1))
    means, ses = [], []
    for kind, swap in (("pcn", 0.0), ("pcn_nodeswap", 0.2)):
        cfg = sm.SamplerConfig(kind=kind, beta=0.2, swap_prob=swap, n_iter=100_000, thin=100_000, seed=802)
        out = sm.run_chain(cfg, small, lik)
        ll = np.array([r for r, mv in zip(out.trace.loglik, out.trace.move) if mv == "pcn"])[20_000:]
        means.append(ll.mean())
        ses.append(sm.batch_means_se(ll))
        if swap:
            checks.append(f"swap acceptance {out.summary['rates'].get('nodeswap', float('nan')):.3f}")
    gap = abs(means[0] - means[1])
    tol = 3 * math.hypot(*ses)
    elapsed = time.perf_counter() - t0
    ok = bool(inv and outv and always and gap <= tol and elapsed < 600)
    checks.append(f"loglik means {means[0]:.3f} vs {means[1]:.3f}, gap {gap:.3f} (<= 3SE {tol:.3f}); "
                  f"{elapsed:.0f}s (<600s)")
    report(8, ok, "; ".join(checks))
    assert ok
