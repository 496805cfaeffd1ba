"""Acceptance gate: one test per criterion, run with `pytest -v`.

Each test prints a single CRITERION line (visible with -rA or -s) and
enforces the stated tolerance and runtime budget.  These tests are
slower than the module suites; the heaviest is the toy-convergence
check, which trains a model and Monte-Carlo samples it.
"""

import itertools
import time

import numpy as np
from scipy import stats

from conftest import finite_diff, tiny_network
from orderlab.autodiff import Tape, Tensor
from orderlab.datagen import MelFile, ToyDistribution, sample_dataset, \
    synthetic_mel, write_mel
from orderlab.metrics import chain_rule_loglik, mcd
from orderlab.model import (CATEGORICAL, LOGISTIC, ModelOutput, Network,
                            NetworkConfig, init_params, sample_head)
from orderlab.objective import elbo_estimand, exact_elbo, train, training_loss
from orderlab.optim import AdamState
from orderlab.orders import (Order, beta_swapped_order, fixed_order,
                             kendall_tau_distance, uniform_order)
from orderlab.quantiser import QuantiserSpec, dequantise, quantise
from orderlab.rng import make_rng
from orderlab.sampler import StrategySpec, confidence_scores, generate, \
    select_topk


def report(n, detail):
    print(f"CRITERION {n}: PASS ({detail})")


# ---- 1. ELBO identity -----------------------------------------------------


def test_criterion_1_elbo_identity():
    start = time.perf_counter()
    rng = make_rng(101)
    worst = 0.0
    cases = 0
    for T in (2, 3, 4):
        for Q in (2, 3):
            for n_f in (1, 2):
                for _rep in range(2):
                    seed = int(rng.integers(1 << 30))
                    net = tiny_network(n_f=n_f, Q=Q, width=8, seed=seed)
                    irng = make_rng(seed, "inst")
                    y = irng.integers(0, Q, size=(n_f, T))
                    mu = irng.normal(size=(n_f, T))
                    perms = [Order(np.array(p))
                             for p in itertools.permutations(range(T))]
                    estimand = np.mean([
                        elbo_estimand(net.config, net.params, y, mu, t, sigma)
                        for sigma in perms for t in range(1, T + 1)])
                    chain = np.mean([chain_rule_loglik(net, y, mu, sigma)
                                     for sigma in perms])
                    worst = max(worst, abs(estimand - chain))
                    cases += 1
    elapsed = time.perf_counter() - start
    assert cases >= 20
    assert worst < 1e-9
    assert elapsed < 10
    report(1, f"{cases} instances, max |delta| = {worst:.2e}, {elapsed:.1f}s")


# ---- 2. gradient correctness ---------------------------------------------


def test_criterion_2_gradient_correctness():
    start = time.perf_counter()
    checked = 0
    worst = 0.0
    for head in (CATEGORICAL, LOGISTIC):
        net = tiny_network(n_f=2, Q=3, width=8, head=head, M=2, seed=202)
        irng = make_rng(202, head)
        y = irng.integers(0, 3, size=(2, 3))
        mu = irng.normal(size=(2, 3))
        sigma = Order(np.array([2, 0, 1]))

        def value(params):
            loss, _ = training_loss(net.config, params, y, mu, t=2, sigma=sigma)
            return float(loss.data)

        leaves = {k: Tensor(v) for k, v in net.params.items()}
        with Tape() as tape:
            loss, _ = training_loss(net.config, leaves, y, mu, t=2, sigma=sigma)
        names = sorted(leaves)
        grads = dict(zip(names,
                         tape.gradients(loss, [leaves[n] for n in names])))
        done = 0
        while done < 50:
            name = names[int(irng.integers(len(names)))]
            arr = net.params[name]
            idx = tuple(int(irng.integers(s)) for s in arr.shape)
            # Richardson-extrapolated central difference: O(h^4) accurate
            d1 = finite_diff(value, net.params, name, idx, h=2e-3)
            d2 = finite_diff(value, net.params, name, idx, h=1e-3)
            fd = (4 * d2 - d1) / 3
            an = grads[name][idx]
            if abs(fd) < 1e-7 and abs(an) < 1e-7:
                continue
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            assert rel < 1e-4, (head, name, idx, rel)
            worst = max(worst, rel)
            done += 1
        checked += done
    elapsed = time.perf_counter() - start
    assert checked == 100
    assert elapsed < 30
    report(2, f"100 coordinates, max rel err = {worst:.2e}, {elapsed:.1f}s")


# ---- 3. toy convergence ---------------------------------------------------


def test_criterion_3_toy_convergence():
    start = time.perf_counter()
    dist = ToyDistribution(
        "hmm", 6, 3,
        init=np.array([0.6, 0.4]),
        trans=np.array([[0.8, 0.2], [0.3, 0.7]]),
        emit=np.array([[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]]))
    qs = QuantiserSpec(0.1, 1.0, 3)
    cfg = NetworkConfig(n_f=1, Q=3, width=64, layers=2)
    net = Network(cfg, init_params(cfg, make_rng(303, "init")), qs, 303)
    seqs, mus = sample_dataset(dist, 8192, make_rng(303, "ds"), qs)
    result = train(net, list(zip(seqs, mus)), 4000, make_rng(303, "train"),
                   batch_size=32, adam=AdamState(lr=2e-3))
    net = result.net

    # expected -ELBO under the true distribution vs true entropy
    space = list(itertools.product(range(3), repeat=6))
    truth = np.array([np.exp(dist.joint_logp(np.array(s))) for s in space])
    truth /= truth.sum()
    mu = dist.mu(qs)
    elbos = np.array([exact_elbo(cfg, net.params,
                                 np.array(s).reshape(1, 6), mu)
                      for s in space])
    expected_elbo = float((truth * elbos).sum())
    gap = abs(-expected_elbo - dist.entropy())
    assert gap < 0.1, gap

    spec = StrategySpec("default", value_mode="sample")
    counts = {}
    srng = make_rng(303, "mc")
    n_mc = 40_000
    for _ in range(n_mc):
        res = generate(net, mu, spec, srng)
        key = tuple(int(v) for v in res.symbols[0])
        counts[key] = counts.get(key, 0) + 1
    emp = np.array([counts.get(s, 0) for s in space], dtype=np.float64)
    emp /= emp.sum()
    tv = 0.5 * np.abs(truth - emp).sum()
    elapsed = time.perf_counter() - start
    assert tv < 0.1, tv
    assert elapsed < 600
    report(3, f"elbo gap = {gap:.3f} nats, MC tv = {tv:.3f}, {elapsed:.0f}s")


# ---- 4. quantiser ---------------------------------------------------------


def test_criterion_4_quantiser():
    start = time.perf_counter()
    rng = make_rng(404)
    a, b = -2.0, 3.0
    vals = rng.uniform(a, b, size=100_000)
    for Q in (2, 10, 100):
        spec = QuantiserSpec(a, b, Q)
        err = np.abs(dequantise(spec, quantise(spec, vals)) - vals)
        bound = (b - a) / (2 * (Q - 1))
        assert err.max() <= bound + 1e-12, (Q, err.max())

    qs = (2, 4, 10, 100)
    for seed in range(5):
        grid, _ = synthetic_mel(20, 30, make_rng(404, seed))
        mcds = []
        for Q in qs:
            spec = QuantiserSpec(float(grid.min()), float(grid.max()), Q)
            recon = dequantise(spec, quantise(spec, grid))
            mcds.append(mcd(grid, np.maximum(recon, 1e-9)))
        assert all(x >= y for x, y in zip(mcds, mcds[1:])), (seed, mcds)
    elapsed = time.perf_counter() - start
    assert elapsed < 60
    report(4, f"bound holds at Q in {{2,10,100}}, mcd non-increasing "
              f"on 5 grids, {elapsed:.1f}s")


# ---- 5. order machinery ---------------------------------------------------


def test_criterion_5_order_machinery():
    start = time.perf_counter()
    rng = make_rng(505)
    for T in (1, 2, 5, 17):
        o = beta_swapped_order(T, 0.0, rng)
        assert (o.perm == np.arange(T)).all()

    T = 5
    counts = np.zeros(T)
    for _ in range(100_000):
        counts[beta_swapped_order(T, 1.0, rng).perm[0]] += 1
    tv = 0.5 * np.abs(counts / counts.sum() - 1 / T).sum()
    assert tv < 0.05, tv

    betas = [0.001, 0.003, 0.01, 0.03, 0.1, 0.35, 1.0]
    T = 16
    ident = fixed_order(T, "l2r")
    taus = []
    for beta in betas:
        d = [kendall_tau_distance(ident, beta_swapped_order(T, beta, rng))
             for _ in range(1000)]
        taus.append(float(np.mean(d)))
    inversions = sum(1 for x, y in zip(taus, taus[1:]) if x > y)
    assert inversions <= 1, taus
    elapsed = time.perf_counter() - start
    assert elapsed < 60
    report(5, f"sigma(1) tv = {tv:.3f}, kendall-tau inversions = "
              f"{inversions}, {elapsed:.1f}s")


# ---- 6. Top-K strategy ----------------------------------------------------


def test_criterion_6_topk():
    start = time.perf_counter()
    rng = make_rng(606)
    worst = 0.0
    for _ in range(1000):
        T = int(rng.integers(2, 8))
        n_f = int(rng.integers(1, 4))
        Q = int(rng.integers(2, 6))
        table = np.log(rng.dirichlet(np.ones(Q), size=(T, n_f)))
        k = int(rng.integers(1, T + 1))
        undecoded = sorted(rng.choice(T, size=k, replace=False).tolist())
        brute = np.array([sum(max(table[p, i, j] for j in range(Q))
                              for i in range(n_f)) for p in undecoded])
        worst = max(worst, np.abs(
            confidence_scores(table, undecoded) - brute).max())
    assert worst < 1e-12

    for _ in range(200):
        positions = sorted(rng.choice(30, size=9, replace=False).tolist())
        scores = rng.integers(0, 4, size=9).astype(float)
        K = int(rng.integers(1, 9))
        oracle = [p for _, p in sorted(zip(-scores, positions))][:K]
        assert select_topk(scores, positions, K) == oracle

    net = tiny_network(Q=3, seed=606)
    for T, K in [(7, 2), (9, 4), (6, 1), (5, 5), (8, 3)]:
        res = generate(net, np.zeros((1, T)),
                       StrategySpec("topk", K=K, value_mode="argmax"),
                       make_rng(606, T, K))
        assert res.forward_calls == -(-T // K), (T, K, res.forward_calls)
    elapsed = time.perf_counter() - start
    assert elapsed < 60
    report(6, f"1000 tables max err = {worst:.1e}, tie rule and "
              f"ceil(T/K) forwards hold, {elapsed:.1f}s")


# ---- 7. sampling-law checks ----------------------------------------------


def test_criterion_7_sampling_laws():
    start = time.perf_counter()
    rng = make_rng(707)
    logits = np.array([0.3, -0.8, 1.4, 0.1])
    n = 100_000
    out = ModelOutput(CATEGORICAL, 4,
                      logits=Tensor(np.tile(logits, (n, 1, 1, 1))))
    draws = sample_head(out, 1.0, 0.0, rng)
    freq = np.bincount(draws.ravel(), minlength=4) / n
    p = np.exp(logits - logits.max())
    p /= p.sum()
    tv_g = 0.5 * np.abs(freq - p).sum()
    assert tv_g < 0.01, tv_g

    # t2 = 0: no value noise; single component is fully deterministic
    mix = ModelOutput(LOGISTIC, 10,
                      mix_logits=Tensor(np.zeros((1, 4, 2, 1))),
                      means=Tensor(rng.uniform(0, 9, size=(1, 4, 2, 1))),
                      log_scales=Tensor(np.zeros((1, 4, 2, 1))))
    a = sample_head(mix, 0.7, 0.0, make_rng(1))
    b = sample_head(mix, 0.7, 0.0, make_rng(2))
    assert (a == b).all()
    multi = ModelOutput(LOGISTIC, 10,
                        mix_logits=Tensor(np.zeros((1, 4, 1, 3))),
                        means=Tensor(np.tile([1.2, 4.9, 7.4], (1, 4, 1, 1))),
                        log_scales=Tensor(np.zeros((1, 4, 1, 3))))
    for seed in range(20):
        vals = sample_head(multi, 1.0, 0.0, make_rng(707, seed))
        assert set(vals.ravel().tolist()) <= {1, 5, 7}

    net = tiny_network(Q=2, seed=707)
    mu = np.zeros((1, 3))
    perms = {p: 0 for p in itertools.permutations(range(3))}
    srng = make_rng(707, "orders")
    runs = 10_000
    for _ in range(runs):
        res = generate(net, mu, StrategySpec("default"), srng)
        perms[tuple(res.order.perm.tolist())] += 1
    emp = np.array([perms[p] for p in sorted(perms)], dtype=np.float64) / runs
    tv_o = 0.5 * np.abs(emp - 1 / 6).sum()
    assert tv_o < 0.05, tv_o
    elapsed = time.perf_counter() - start
    report(7, f"gumbel tv = {tv_g:.4f}, t2=0 deterministic, order tv = "
              f"{tv_o:.3f}, {elapsed:.0f}s")


# ---- 8. order-matters demonstration --------------------------------------


def order_spread_pvalue(dist, seed, n_test=60):
    """Train an under-capacity model and test whether per-order
    chain-rule log-likelihoods differ across 12 decoding orders."""
    qs = QuantiserSpec(0.1, 1.0, 3)
    cfg = NetworkConfig(n_f=1, Q=3, width=8, layers=1)
    net = Network(cfg, init_params(cfg, make_rng(seed, "init")), qs, seed)
    seqs, mus = sample_dataset(dist, 256, make_rng(seed, "ds"), qs)
    net = train(net, list(zip(seqs, mus)), 1500, make_rng(seed, "tr"),
                batch_size=16, adam=AdamState(lr=2e-3)).net
    orng = make_rng(seed, "orders")
    orders = ([fixed_order(6, "l2r"), fixed_order(6, "r2l")]
              + [uniform_order(6, orng) for _ in range(10)])
    test, tmus = sample_dataset(dist, n_test, make_rng(seed, "test"), qs)
    mat = np.array([[chain_rule_loglik(net, y, mu, o) for o in orders]
                    for y, mu in zip(test, tmus)])
    _, p = stats.friedmanchisquare(*mat.T)
    spread = float(mat.mean(axis=0).max() - mat.mean(axis=0).min())
    return p, spread


def test_criterion_8_order_matters():
    start = time.perf_counter()
    markov = ToyDistribution(
        "markov", 6, 3,
        init=np.array([0.4, 0.3, 0.3]),
        trans=np.array([[0.85, 0.1, 0.05],
                        [0.05, 0.85, 0.1],
                        [0.1, 0.05, 0.85]]))
    iid = ToyDistribution("iid", 6, 3, init=np.array([0.4, 0.35, 0.25]))
    p_markov, spread_m = order_spread_pvalue(markov, 0)
    p_iid, spread_i = order_spread_pvalue(iid, 0)
    elapsed = time.perf_counter() - start
    assert p_markov < 0.05, p_markov
    assert p_iid >= 0.05, p_iid
    report(8, f"markov p = {p_markov:.1e} (spread {spread_m:.2f} nats), "
              f"iid control p = {p_iid:.2f} (spread {spread_i:.4f}), "
              f"{elapsed:.0f}s")


# ---- 9. reproducibility ---------------------------------------------------


TOY_INI = """
[run]
seed = 11
out = unused

[dataset]
kind = markov
T = 4
Q = 3
init = 0.5,0.3,0.2
trans = 0.7,0.2,0.1;0.15,0.7,0.15;0.1,0.2,0.7

[network]
width = 16
layers = 1

[quantiser]
a = 0.1
b = 1.0

[train]
steps = 20
batch_size = 4
dataset_count = 16
"""


def test_criterion_9_reproducibility(tmp_path):
    from orderlab import cli

    cfg = tmp_path / "toy.ini"
    cfg.write_text(TOY_INI)

    def run(args):
        return cli.main([str(a) for a in args])

    outs = []
    for tag in ("a", "b"):
        t = tmp_path / f"train_{tag}"
        s = tmp_path / f"samp_{tag}"
        q = tmp_path / f"quant_{tag}"
        assert run(["train", "--config", cfg, "--out", t]) == 0
        assert run(["sample", "--checkpoint", t / "model.ckpt",
                    "--config", cfg, "--strategy", "topk", "--k", 2,
                    "--values", "sample", "--count", 3, "--out", s]) == 0
        grid, _ = synthetic_mel(12, 10, make_rng(9))
        mel = tmp_path / f"in_{tag}.mel"
        write_mel(mel, MelFile(grid))
        assert run(["quantise", "--input", mel, "--q", 7, "--out", q]) == 0
        outs.append((t, s, q))

    def same(pa, pb):
        """Byte equality; manifests record the invoked paths, so path-valued
        keys are excluded before comparing."""
        if pa.name == "manifest.ini":
            def strip(p):
                return [l for l in p.read_text().splitlines()
                        if not l.startswith(("checkpoint = ", "input = ",
                                             "out = "))]
            return strip(pa) == strip(pb)
        return pa.read_bytes() == pb.read_bytes()

    checked = 0
    for (ta, sa, qa), (tb, sb, qb) in [(outs[0], outs[1])]:
        for name in ("model.ckpt", "loss_trace.csv", "manifest.ini"):
            assert same(ta / name, tb / name), name
            checked += 1
        for pa in sorted(sa.iterdir()):
            assert same(pa, sb / pa.name), pa.name
            checked += 1
        for pa in sorted(qa.iterdir()):
            assert same(pa, qb / pa.name), pa.name
            checked += 1

    # sweep outputs contain a measured wall_ms column; they are
    # bit-identical after removing that one measured field
    def strip_wall(path):
        rows = (path / "sweep.csv").read_text().splitlines()
        return [",".join(r.split(",")[:-1]) for r in rows]

    ckpt = outs[0][0] / "model.ckpt"
    sweeps = []
    for tag in ("a", "b"):
        w = tmp_path / f"sweep_{tag}"
        assert run(["sweep", "--axis", "k", "--values", "1,2",
                    "--checkpoint", ckpt, "--config", cfg,
                    "--repetitions", 2, "--seed", 3, "--out", w]) == 0
        sweeps.append(w)
    assert strip_wall(sweeps[0]) == strip_wall(sweeps[1])
    report(9, f"{checked} files bit-identical, sweep identical modulo "
              f"measured wall_ms")
