"""Acceptance criteria 1-11. Each test prints one PASS/FAIL line.

Seeds are fixed here once: default zoo seed 0, attack payload seed 0
(256 bytes), experiment seeds 0-4 for the threshold detector and 0-9 for the
histogram-boosting detector.
"""
import math
import time

import numpy as np
import pytest

import oracles
from stegozoo import bitview, featurex, netcore, stegattack, tensorstore, zooforge
from stegozoo.cli import run_pipeline
from stegozoo.detectkit import experiment, metrics
from stegozoo.stegattack import CapacityError, Payload

ZOO_SEED = 0
PAYLOAD = Payload.random(256, seed=0)


@pytest.fixture
def verdict(capsys):
    def emit(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def default_zoo():
    return zooforge.generate_zoo(zooforge.ZooManifest(seed=ZOO_SEED))


def _random_model(rng, words=False):
    sizes = [int(v) for v in rng.integers(1, 6, rng.integers(2, 4))]
    arch = tensorstore.Arch(tuple(sizes), ("tanh",) * (len(sizes) - 2) + ("identity",))
    n = arch.n_params
    if words:
        w = bitview.as_floats(rng.integers(0, 2**32, n, dtype=np.uint32))
    else:
        w = rng.normal(size=n).astype(np.float32)
    m = tensorstore.from_tensors(arch, [np.zeros(s, np.float32) for _, s in arch.tensor_specs()])
    return tensorstore.unflatten(m, w)


def test_c01_payload_roundtrip(verdict):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    failures, remainders, xs = 0, 0, set()
    for i in range(1000):
        x = i % 23 + 1
        m = _random_model(rng, words=bool(i % 2))
        cap = m.n_params * x
        n_bits = int(rng.integers(1, cap + 1))
        if i % 3 == 0 and cap > x:
            n_bits = (n_bits // x) * x + int(rng.integers(1, x)) if x > 1 else n_bits
            n_bits = min(n_bits, cap)
        p = Payload(rng.integers(0, 2, n_bits))
        remainders += n_bits % x != 0
        xs.add(x)
        if stegattack.extract(stegattack.embed(m, x, p), x, n_bits) != p:
            failures += 1
    elapsed = time.perf_counter() - t0
    ok = failures == 0 and xs == set(range(1, 24)) and remainders > 0 and elapsed < 10
    verdict(1, ok, f"1000 triples, {failures} mismatches, {remainders} with r != 0, all X covered: "
                   f"{xs == set(range(1, 24))}, {elapsed:.2f}s (< 10s)")


def test_c02_capacity_law(verdict):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    wrong, cases = 0, 0
    for n_w in (1, 2, 3, 5, 8, 13):
        arch = tensorstore.Arch((1, n_w), ("identity",))
        m = _random_model(rng)
        m = tensorstore.unflatten(
            tensorstore.from_tensors(arch, [np.zeros(s, np.float32) for _, s in arch.tensor_specs()]),
            rng.normal(size=arch.n_params).astype(np.float32),
        )
        for x in range(1, 24):
            cap = m.n_params * x
            sizes = {0, 1, cap - 1, cap, cap + 1, cap + 2, 2 * cap, int(rng.integers(0, cap + 1))}
            for n_s in sorted(s for s in sizes if s >= 0):
                cases += 1
                try:
                    stegattack.embed(m, x, Payload(np.ones(n_s, np.uint8)))
                    raised = False
                except CapacityError:
                    raised = True
                wrong += raised != (n_s > cap)
    elapsed = time.perf_counter() - t0
    verdict(2, wrong == 0 and elapsed < 1, f"{cases} boundary cases, {wrong} violations, {elapsed:.3f}s (< 1s)")


def test_c03_exponent_and_perturbation_bound(verdict):
    rng = np.random.default_rng(303)
    n = 100_000
    sign = rng.integers(0, 2, n, dtype=np.uint32) << np.uint32(31)
    expo = rng.integers(1, 255, n, dtype=np.uint32) << np.uint32(23)
    mant = rng.integers(0, 2**23, n, dtype=np.uint32)
    words = sign | expo | mant
    xs = rng.integers(1, 24, n)
    exp_bad = bound_bad = 0
    for x in range(1, 24):
        sel = xs == x
        w = words[sel]
        bits = rng.integers(0, 2, w.size * x).astype(np.uint8)
        out = stegattack.embed_words(w, x, bits)
        exp_bad += int(np.sum((out >> np.uint32(23)) != (w >> np.uint32(23))))
        v0 = bitview.as_floats(w).astype(np.float64)
        v1 = bitview.as_floats(out).astype(np.float64)
        e = bitview.exponent_field(w)
        bound = np.ldexp(1.0, e - 127 + x - 23)
        bound_bad += int(np.sum(~(np.abs(v1 - v0) < bound)))
    verdict(3, exp_bad == bound_bad == 0,
            f"{n} weights over X in 1..23: {exp_bad} sign/exponent changes, {bound_bad} bound violations")


def test_c04_unchanged_fraction(verdict, default_zoo):
    n = len(default_zoo) * default_zoo[0].n_params
    means = {}
    for x in range(1, 10):
        means[x] = float(zooforge.unchanged_fractions(default_zoo, zooforge.attack_zoo(default_zoo, x, PAYLOAD)).mean())
    lines, ok = [], True
    for x in (1, 2, 4, 8):
        p = 2.0 ** -x
        sd = math.sqrt(p * (1 - p) / n)
        within = abs(means[x] - p) <= 3 * sd
        ratio = means[x + 1] / means[x]
        halves = abs(ratio - 0.5) <= 0.05
        ok &= within and halves
        lines.append(f"X={x}: {means[x]:.5f} vs {p:.5f} ({(means[x] - p) / sd:+.2f} sd), "
                     f"ratio X+1/X {ratio:.3f}")
    verdict(4, ok, "; ".join(lines))


def test_c05_gradient_correctness(verdict):
    rng = np.random.default_rng(505)
    acts = ("identity", "relu", "tanh", "sigmoid")
    t0 = time.perf_counter()
    worst_rel, bad = 0.0, 0
    for i in range(50):
        hidden = acts[i % 4]
        output, loss = [("identity", "mse"), ("sigmoid", "mse"), ("softmax", "cross_entropy"), ("tanh", "mse")][i // 4 % 4]
        sizes = (int(rng.integers(1, 5)), int(rng.integers(2, 6)), int(rng.integers(2, 4)))
        arch = tensorstore.Arch(sizes, (hidden, output))
        net = netcore.Network.init(arch, int(rng.integers(1 << 30)))
        x = rng.normal(size=(3, sizes[0]))
        t = netcore.one_hot(rng.integers(0, sizes[2], 3), sizes[2]) if loss == "cross_entropy" \
            else rng.normal(size=(3, sizes[2]))
        g = netcore.backprop(net, x, t, loss)
        flat = [float(v) for v in tensorstore.flatten(net.record)]
        ref = np.array(oracles.finite_difference(list(sizes), [hidden, output], flat, x.tolist(), t.tolist(), loss))
        diff = np.abs(g - ref)
        rel = diff / np.maximum(np.maximum(np.abs(g), np.abs(ref)), 1e-300)
        bad += int(np.sum((rel > 1e-3) & (diff > 1e-5)))
        worst_rel = max(worst_rel, float(np.max(np.where(diff > 1e-5, rel, 0.0))))
    elapsed = time.perf_counter() - t0
    verdict(5, bad == 0 and elapsed < 30,
            f"50 nets, {bad} coordinates outside tolerance, worst relative error {worst_rel:.2e}, {elapsed:.1f}s")


def _ae_split(zoo, seed):
    ids = [m.meta["model_id"] for m in zoo]
    train_ids = set(featurex.split_benign(ids, 0.7, seed))
    return [m for m in zoo if m.meta["model_id"] in train_ids], [m for m in zoo if m.meta["model_id"] not in train_ids]


def test_c06_autoencoder_sanity(verdict, default_zoo):
    seed = 0
    train, held = _ae_split(default_zoo, seed)
    ae = featurex.train_autoencoder(train, featurex.AEConfig(), seed)
    again = featurex.train_autoencoder(train, featurex.AEConfig(), seed)
    initial = featurex.AutoencoderModel(netcore.Network.init(ae.network.arch, seed), ae.mean, ae.std)
    before = float(np.mean([featurex.reconstruction_loss(initial, m) for m in held]))
    after = float(np.mean([featurex.reconstruction_loss(ae, m) for m in held]))
    same = again.network.record == ae.network.record
    verdict(6, after <= 0.5 * before and same,
            f"held-out loss {before:.4f} -> {after:.4f} (ratio {after / before:.3f}, need <= 0.5); "
            f"deterministic: {same}")


def test_c07_unsupervised_trend(verdict, default_zoo):
    attacked = {x: zooforge.attack_zoo(default_zoo, x, PAYLOAD) for x in (8, 23)}
    f1 = {8: [], 23: []}
    for seed in range(5):
        train, _ = _ae_split(default_zoo, seed)
        ae = featurex.train_autoencoder(train, featurex.AEConfig(), seed)
        train_ids = [m.meta["model_id"] for m in train]
        for x in f1:
            ds = featurex.build_dataset(default_zoo, attacked[x], "loss", ae)
            row, _ = experiment.run_level(ds, "mean_eps", seed, train_ids)
            f1[x].append(row.F1)
    m8, m23 = float(np.mean(f1[8])), float(np.mean(f1[23]))
    verdict(7, m23 > 0.5 and m23 >= m8 + 0.1,
            f"MEAN+eps on loss over 5 seeds: F1(X=8)={m8:.3f}, F1(X=23)={m23:.3f} "
            f"(need > 0.5 and >= F1(8)+0.1)")


def test_c08_supervised_trend(verdict, default_zoo):
    levels = (4, 8, 16, 20, 23)
    seeds = range(10)
    reports = []
    datasets = {x: featurex.build_dataset(default_zoo, zooforge.attack_zoo(default_zoo, x, PAYLOAD), "weights")
                for x in levels}
    for seed in seeds:
        reports.append(experiment.run_experiment(datasets, "hgb", seed, levels))
    mean = experiment.mean_by_level(reports)
    steps = [mean[b] - mean[a] for a, b in zip(levels, levels[1:])]
    monotone = all(s >= -0.05 for s in steps)
    verdict(8, mean[23] >= 0.9 and monotone,
            "hgb on weights, 10 seeds: " + ", ".join(f"F1(X={x})={mean[x]:.3f}" for x in levels)
            + f"; largest drop {-min(min(steps), 0):.3f} (margin 0.05)")


def test_c09_metrics_oracle(verdict):
    rng = np.random.default_rng(909)
    mismatches = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 40))
        t = rng.integers(0, 2, n)
        p = rng.integers(0, 2, n) if rng.random() < 0.8 else np.zeros(n, int)
        s = metrics.confusion(t, p)
        ref = oracles.confusion(t.tolist(), p.tolist())
        mismatches += (s.tp, s.fp, s.fn, s.tn) != ref or s.as_dict() != oracles.scores(*ref)
    verdict(9, mismatches == 0, f"10000 fuzzed label vectors, {mismatches} mismatches")


def test_c10_bit_exact_persistence(verdict, tmp_path):
    rng = np.random.default_rng(1010)
    arch = tensorstore.Arch.parse("2-8-8-2")
    specials = np.array([0x7F800000, 0xFF800000, 0x7FC00000, 0xFFC00123, 0x7F800001, 0x00000001, 0x80000000],
                        dtype=np.uint32)
    originals, attacked, bad_models = [], [], 0
    for i in range(20):
        words = rng.integers(0, 2**32, arch.n_params, dtype=np.uint32)
        words[rng.choice(arch.n_params, 7, replace=False)] = specials
        m = tensorstore.unflatten(
            tensorstore.from_tensors(arch, [np.zeros(s, np.float32) for _, s in arch.tensor_specs()]),
            bitview.as_floats(words), {"model_id": f"m{i:02d}"})
        a = stegattack.embed_fill(m, i % 23 + 1, PAYLOAD)
        for rec in (m, a):
            tensorstore.save(rec, tmp_path / "x.mzw")
            back = tensorstore.load(tmp_path / "x.mzw")
            same = np.array_equal(bitview.as_words(tensorstore.flatten(back)),
                                  bitview.as_words(tensorstore.flatten(rec)))
            bad_models += not same or back.meta != rec.meta
        originals.append(m)
        attacked.append(a)
    ds = featurex.build_dataset(originals, attacked, "weights")
    featurex.write_csv(ds, tmp_path / "w.csv")
    nan_words = int(np.isnan(ds.features).sum())
    csv_ok = featurex.read_csv(tmp_path / "w.csv").equals(ds)
    with np.errstate(invalid="ignore"):  # widening signalling NaNs is expected here
        wide = ds.features.astype(np.float64)
    wide[np.isnan(wide)] = np.uint64(0x7FF8000000000ABC).view(np.float64)
    grads = featurex.FeatureDataset("grads", ds.model_ids, ds.labels, ds.x_lsb, wide)
    featurex.write_csv(grads, tmp_path / "g.csv")
    csv64_ok = featurex.read_csv(tmp_path / "g.csv").equals(grads)
    verdict(10, bad_models == 0 and csv_ok and csv64_ok and nan_words > 0,
            f"40 MZW1 round-trips with {bad_models} differences; float32 CSV with {nan_words} NaN words "
            f"lossless: {csv_ok}; float64 CSV lossless: {csv64_ok}")


def test_c11_end_to_end_reproducibility(verdict, tmp_path):
    timings, outputs = [], []
    for run in ("a", "b"):
        t0 = time.perf_counter()
        reports = run_pipeline(tmp_path / run, seed=0)
        timings.append(time.perf_counter() - t0)
        outputs.append({name: path.read_bytes() for name, path in reports.items()})
    identical = outputs[0] == outputs[1]
    rows = sum(len(experiment.EvalReport.from_csv(b.decode()).rows) for b in outputs[0].values())
    verdict(11, identical and max(timings) < 15 * 60 and rows == 23 * len(outputs[0]),
            f"{len(outputs[0])} EvalReport CSVs ({rows} rows) byte-identical: {identical}; "
            f"run times {timings[0]:.0f}s and {timings[1]:.0f}s (< 900s)")
