import numpy as np
import pytest

from flim.bitpack import BinaryTensor
from flim.crossbar import CrossbarConfig
from flim.engine import (
    BinaryConv2D,
    BinaryDense,
    Flatten,
    InputBinarize,
    MaxPool2D,
    ModelGraph,
    Threshold,
    conv2d_binary,
    dense_binary,
    infer_batch,
)
from flim.faultgen import (
    FaultMask,
    gen_bitflip_mask,
    gen_dynamic_mask,
    gen_stuckat_mask,
)
from flim.injector import (
    InjectionError,
    InjectionSession,
    apply_featuremap_mask,
    faulty_product,
    inject_conv_exact,
    inject_dense_exact,
    inject_fast,
    run_with_faults,
)


# ---------------------------------------------------------------------------
# independent brute-force oracle: quadruple loop + its own gate bookkeeping
# ---------------------------------------------------------------------------

def oracle_conv(signs, weights, mask, cfg, counters=None):
    """Per-product faulty convolution written from the definitions."""
    f, kh, kw, cin = weights.shape
    h, w, _ = signs.shape
    oh, ow = h - kh + 1, w - kw + 1
    out = np.zeros((oh, ow, f), dtype=np.int64)
    if counters is None:
        counters = {}
    for y in range(oh):
        for x in range(ow):
            for c in range(f):
                acc = 0
                k = 0
                for ky in range(kh):
                    for kx in range(kw):
                        for ci in range(cin):
                            p = 1 if signs[y + ky, x + kx, ci] == weights[c, ky, kx, ci] else -1
                            gate = (
                                (c // cfg.gate_cols) % cfg.crossbars_per_layer,
                                k % cfg.gate_rows,
                                c % cfg.gate_cols,
                            )
                            acc += oracle_apply(p, mask, gate, counters)
                            k += 1
                out[y, x, c] = acc
    return out, counters


def oracle_dense(signs, weights, mask, cfg, counters=None):
    out = np.zeros(weights.shape[0], dtype=np.int64)
    if counters is None:
        counters = {}
    for j in range(weights.shape[0]):
        for i in range(weights.shape[1]):
            p = 1 if signs[i] == weights[j, i] else -1
            gate = (
                (j // cfg.gate_cols) % cfg.crossbars_per_layer,
                i % cfg.gate_rows,
                j % cfg.gate_cols,
            )
            out[j] += oracle_apply(p, mask, gate, counters)
    return out, counters


def oracle_apply(p, mask, gate, counters):
    _, r, c = gate
    if mask is None or not mask.grid[r, c]:
        if mask is not None and mask.fault_type == "dynamic":
            counters[gate] = counters.get(gate, 0) + 1
        return p
    if mask.fault_type == "bitflip":
        return -p
    if mask.fault_type == "stuckat":
        return 2 * int(mask.stuck_values[r, c]) - 1
    t = counters.get(gate, 0)
    counters[gate] = t + 1
    return -p if t % (mask.period + 1) == 0 else p


def random_signs(rng, shape):
    return rng.choice([-1, 1], size=shape).astype(np.int8)


def random_mask(rng, rows, cols, kinds=("bitflip", "stuckat", "dynamic"), layer=""):
    kind = rng.choice(kinds)
    seed = int(rng.integers(2**63))
    rate = float(rng.integers(0, 101)) / 100.0
    if kind == "bitflip":
        return gen_bitflip_mask(rows, cols, rate, seed, layer_name=layer)
    if kind == "stuckat":
        return gen_stuckat_mask(rows, cols, rate, seed, p_one=0.5, layer_name=layer)
    period = int(rng.choice([0, 1, 2, 5]))
    return gen_dynamic_mask(rows, cols, rate, period, seed, layer_name=layer)


# ---------------------------------------------------------------------------
# faulty_product
# ---------------------------------------------------------------------------

def test_faulty_product_table():
    assert faulty_product(1, None) == 1
    assert faulty_product(1, ("bitflip", 0, 0)) == -1
    assert faulty_product(-1, ("stuckat", 1, 0)) == 1
    assert faulty_product(1, ("stuckat", -1, 0)) == -1


def test_faulty_product_dynamic_pattern():
    got = [faulty_product(1, ("dynamic", 0, 2), t) for t in range(6)]
    assert got == [-1, 1, 1, -1, 1, 1]


# ---------------------------------------------------------------------------
# exact path
# ---------------------------------------------------------------------------

def make_session(mode, masks, cfg):
    return InjectionSession(mode, masks, cfg)


def test_exact_conv_empty_mask_is_clean():
    rng = np.random.default_rng(0)
    signs = random_signs(rng, (6, 6, 2))
    layer = BinaryConv2D("c", BinaryTensor.from_signs(random_signs(rng, (3, 3, 3, 2))))
    ses = make_session("exact", {}, CrossbarConfig(8, 4))
    t = BinaryTensor.from_signs(signs)
    assert np.array_equal(inject_conv_exact(t, layer, ses), conv2d_binary(t, layer))


def test_exact_single_flip_changes_one_output_by_2p():
    # 1x1 input, 1x1 kernel, one channel: exactly one product on gate (0,0,0)
    layer = BinaryConv2D("c", BinaryTensor.from_signs(np.ones((1, 1, 1, 1), dtype=np.int8)))
    cfg = CrossbarConfig(4, 4)
    grid = np.zeros((4, 4), dtype=np.uint8)
    grid[0, 0] = 1
    mask = FaultMask("c", "bitflip", grid)
    inp = BinaryTensor.from_signs(np.ones((1, 1, 1), dtype=np.int8))
    clean = conv2d_binary(inp, layer)
    faulty = inject_conv_exact(inp, layer, make_session("exact", {"c": mask}, cfg))
    assert clean[0, 0, 0] == 1 and faulty[0, 0, 0] == -1


def test_exact_dense_all_stuck_plus_one():
    rng = np.random.default_rng(1)
    v = random_signs(rng, 12)
    w = random_signs(rng, (5, 12))
    cfg = CrossbarConfig(6, 5)
    grid = np.ones((6, 5), dtype=np.uint8)
    mask = FaultMask("d", "stuckat", grid, grid.copy())
    layer = BinaryDense("d", BinaryTensor.from_signs(w))
    out = inject_dense_exact(BinaryTensor.from_signs(v), layer, make_session("exact", {"d": mask}, cfg))
    assert np.all(out == 12)


def test_exact_dense_all_bitflip_negates():
    rng = np.random.default_rng(2)
    v = random_signs(rng, 16)
    w = random_signs(rng, (6, 16))
    cfg = CrossbarConfig(8, 3)
    mask = FaultMask("d", "bitflip", np.ones((8, 3), dtype=np.uint8))
    layer = BinaryDense("d", BinaryTensor.from_signs(w))
    clean = dense_binary(BinaryTensor.from_signs(v), layer)
    out = inject_dense_exact(BinaryTensor.from_signs(v), layer, make_session("exact", {"d": mask}, cfg))
    assert np.array_equal(out, -clean)


def test_exact_conv_against_oracle():
    rng = np.random.default_rng(10)
    for _ in range(40):
        cfg = CrossbarConfig(int(rng.integers(2, 12)), int(rng.integers(2, 8)), int(rng.integers(1, 3)))
        signs = random_signs(rng, (6, 6, 2))
        w = random_signs(rng, (int(rng.integers(1, 6)), 3, 3, 2))
        mask = random_mask(rng, cfg.gate_rows, cfg.gate_cols, layer="c")
        layer = BinaryConv2D("c", BinaryTensor.from_signs(w))
        ses = make_session("exact", {"c": mask}, cfg)
        got = inject_conv_exact(BinaryTensor.from_signs(signs), layer, ses)
        want, _ = oracle_conv(signs, w, mask, cfg)
        assert np.array_equal(got, want)


def test_exact_dense_against_oracle():
    rng = np.random.default_rng(11)
    for _ in range(60):
        cfg = CrossbarConfig(int(rng.integers(2, 12)), int(rng.integers(2, 8)), int(rng.integers(1, 3)))
        v = random_signs(rng, int(rng.integers(4, 40)))
        w = random_signs(rng, (int(rng.integers(2, 12)), v.size))
        mask = random_mask(rng, cfg.gate_rows, cfg.gate_cols, layer="d")
        layer = BinaryDense("d", BinaryTensor.from_signs(w))
        got = inject_dense_exact(BinaryTensor.from_signs(v), layer, make_session("exact", {"d": mask}, cfg))
        want, _ = oracle_dense(v, w, mask, cfg)
        assert np.array_equal(got, want)


def test_exact_dynamic_counters_persist_across_images():
    rng = np.random.default_rng(12)
    cfg = CrossbarConfig(3, 2)
    mask = gen_dynamic_mask(3, 2, 0.8, period=2, seed=9, layer_name="d")
    w = random_signs(rng, (4, 6))
    layer = BinaryDense("d", BinaryTensor.from_signs(w))
    vs = [random_signs(rng, 6) for _ in range(3)]

    ses = make_session("exact", {"d": mask}, cfg)
    got = [inject_dense_exact(BinaryTensor.from_signs(v), layer, ses) for v in vs]

    counters = {}
    for i, v in enumerate(vs):
        want, counters = oracle_dense(v, w, mask, cfg, counters)
        assert np.array_equal(got[i], want), f"image {i}"


# ---------------------------------------------------------------------------
# fast path == exact path
# ---------------------------------------------------------------------------

def test_fast_equals_exact_conv_random():
    rng = np.random.default_rng(20)
    for _ in range(60):
        cfg = CrossbarConfig(int(rng.integers(2, 12)), int(rng.integers(2, 8)), int(rng.integers(1, 3)))
        signs = random_signs(rng, (int(rng.integers(4, 9)), int(rng.integers(4, 9)), int(rng.integers(1, 5))))
        w = random_signs(rng, (int(rng.integers(1, 9)), 3, 3, signs.shape[2]))
        mask = random_mask(rng, cfg.gate_rows, cfg.gate_cols, layer="c")
        layer = BinaryConv2D("c", BinaryTensor.from_signs(w))
        t = BinaryTensor.from_signs(signs)
        exact = inject_conv_exact(t, layer, make_session("exact", {"c": mask}, cfg))
        fast = inject_fast(t, layer, make_session("fast", {"c": mask}, cfg))
        assert np.array_equal(exact, fast)


def test_fast_equals_exact_dense_random():
    rng = np.random.default_rng(21)
    for _ in range(60):
        cfg = CrossbarConfig(int(rng.integers(2, 12)), int(rng.integers(2, 8)), int(rng.integers(1, 3)))
        v = random_signs(rng, int(rng.integers(4, 128)))
        w = random_signs(rng, (int(rng.integers(2, 16)), v.size))
        mask = random_mask(rng, cfg.gate_rows, cfg.gate_cols, layer="d")
        layer = BinaryDense("d", BinaryTensor.from_signs(w))
        t = BinaryTensor.from_signs(v)
        exact = inject_dense_exact(t, layer, make_session("exact", {"d": mask}, cfg))
        fast = inject_fast(t, layer, make_session("fast", {"d": mask}, cfg))
        assert np.array_equal(exact, fast)


def test_fast_equals_exact_conv_same_padding_stride():
    rng = np.random.default_rng(26)
    for _ in range(20):
        cfg = CrossbarConfig(int(rng.integers(2, 10)), int(rng.integers(2, 6)))
        signs = random_signs(rng, (7, 7, 2))
        w = random_signs(rng, (5, 3, 3, 2))
        mask = random_mask(rng, cfg.gate_rows, cfg.gate_cols, layer="c")
        layer = BinaryConv2D("c", BinaryTensor.from_signs(w), stride=(2, 2), padding="same")
        t = BinaryTensor.from_signs(signs)
        exact = inject_conv_exact(t, layer, make_session("exact", {"c": mask}, cfg))
        fast = inject_fast(t, layer, make_session("fast", {"c": mask}, cfg))
        assert np.array_equal(exact, fast)


def test_fast_dynamic_long_period_sparse_path():
    rng = np.random.default_rng(22)
    cfg = CrossbarConfig(5, 4)
    mask = gen_dynamic_mask(5, 4, 0.5, period=200, seed=3, layer_name="d")
    w = random_signs(rng, (8, 20))
    layer = BinaryDense("d", BinaryTensor.from_signs(w))
    ses_e = make_session("exact", {"d": mask}, cfg)
    ses_f = make_session("fast", {"d": mask}, cfg)
    for _ in range(12):
        v = BinaryTensor.from_signs(random_signs(rng, 20))
        assert np.array_equal(inject_dense_exact(v, layer, ses_e), inject_fast(v, layer, ses_f))


def test_fast_dynamic_counters_continue_across_batches():
    rng = np.random.default_rng(23)
    cfg = CrossbarConfig(4, 3)
    mask = gen_dynamic_mask(4, 3, 0.6, period=2, seed=7, layer_name="c")
    w = random_signs(rng, (3, 2, 2, 1))
    layer = BinaryConv2D("c", BinaryTensor.from_signs(w))
    imgs = [random_signs(rng, (5, 5, 1)) for _ in range(4)]

    ses_split = make_session("fast", {"c": mask}, cfg)
    split = [inject_fast(BinaryTensor.from_signs(s), layer, ses_split) for s in imgs]

    ses_exact = make_session("exact", {"c": mask}, cfg)
    whole = [inject_conv_exact(BinaryTensor.from_signs(s), layer, ses_exact) for s in imgs]
    for a, b in zip(split, whole):
        assert np.array_equal(a, b)


def test_dynamic_period_zero_equals_permanent_bitflip():
    rng = np.random.default_rng(24)
    cfg = CrossbarConfig(6, 5)
    dyn = gen_dynamic_mask(6, 5, 0.4, period=0, seed=77, layer_name="d")
    flip = gen_bitflip_mask(6, 5, 0.4, seed=77, layer_name="d")
    w = random_signs(rng, (7, 23))
    layer = BinaryDense("d", BinaryTensor.from_signs(w))
    for mode in ("exact", "fast"):
        ses_d = make_session(mode, {"d": dyn}, cfg)
        ses_f = make_session(mode, {"d": flip}, cfg)
        for _ in range(5):
            v = BinaryTensor.from_signs(random_signs(rng, 23))
            fn = inject_dense_exact if mode == "exact" else inject_fast
            assert np.array_equal(fn(v, layer, ses_d), fn(v, layer, ses_f))


def test_dynamic_firing_count_formula():
    # over m scheduled ops a gate fires ceil(m / (period+1)) times (fire-first)
    from flim.crossbar import gate_op_sequence

    cfg = CrossbarConfig(3, 4)
    for period in (0, 1, 2, 5, 9):
        fires = {}
        totals = {}
        for gate, counter in gate_op_sequence("BinaryDense", (7, 11), cfg, images=3):
            key = (gate.crossbar_index, gate.row, gate.col)
            totals[key] = counter + 1
            if counter % (period + 1) == 0:
                fires[key] = fires.get(key, 0) + 1
        for key, m in totals.items():
            want = m // (period + 1) + (1 if m % (period + 1) else 0)
            assert fires.get(key, 0) == want, (period, key, m)


def test_fast_throughput_beats_exact():
    # machine-relative: the fast path is >=10x the exact path on a layer of
    # LeNet scale (13x13x16 input, 32 filters)
    import time

    rng = np.random.default_rng(50)
    cfg = CrossbarConfig(40, 10)
    mask = gen_bitflip_mask(40, 10, 0.1, seed=1, layer_name="c")
    layer = BinaryConv2D("c", BinaryTensor.from_signs(random_signs(rng, (32, 3, 3, 16))))
    t = BinaryTensor.from_signs(random_signs(rng, (13, 13, 16)))

    ses = make_session("exact", {"c": mask}, cfg)
    t0 = time.perf_counter()
    exact_out = inject_conv_exact(t, layer, ses)
    exact_s = time.perf_counter() - t0

    ses = make_session("fast", {"c": mask}, cfg)
    inject_fast(t, layer, ses)  # warm the plan cache
    reps = 20
    t0 = time.perf_counter()
    for _ in range(reps):
        ses2 = make_session("fast", {"c": mask}, cfg)
        fast_out = inject_fast(t, layer, ses2)
    fast_s = (time.perf_counter() - t0) / reps

    assert np.array_equal(exact_out, fast_out)
    assert exact_s / fast_s >= 10, f"fast only {exact_s / fast_s:.1f}x exact"


def test_monotone_flip_sets():
    # masks A subset of B on a layer with one product per gate and per output:
    # the set of changed products under B contains that under A
    rng = np.random.default_rng(25)
    cfg = CrossbarConfig(1, 36)
    v = random_signs(rng, 1)
    w = random_signs(rng, (36, 1))
    layer = BinaryDense("d", BinaryTensor.from_signs(w))
    clean = dense_binary(BinaryTensor.from_signs(v), layer)
    grid_b = (np.random.default_rng(1).random((1, 36)) < 0.5).astype(np.uint8)
    grid_a = grid_b.copy()
    grid_a[0, grid_a[0].cumsum() > 8] = 0  # strict subset
    out_a = inject_dense_exact(
        BinaryTensor.from_signs(v), layer, make_session("exact", {"d": FaultMask("d", "bitflip", grid_a)}, cfg)
    )
    out_b = inject_dense_exact(
        BinaryTensor.from_signs(v), layer, make_session("exact", {"d": FaultMask("d", "bitflip", grid_b)}, cfg)
    )
    changed_a = set(np.nonzero(out_a != clean)[0])
    changed_b = set(np.nonzero(out_b != clean)[0])
    assert changed_a < changed_b


# ---------------------------------------------------------------------------
# featuremap approximation
# ---------------------------------------------------------------------------

def test_featuremap_identity_and_negation():
    rng = np.random.default_rng(30)
    feat = BinaryTensor.from_signs(random_signs(rng, (4, 4, 3)))
    zero = np.zeros(16, dtype=np.uint8)
    same = apply_featuremap_mask(feat, zero, zero, zero)
    assert np.array_equal(same.to_signs(), feat.to_signs())
    ones = np.ones(16, dtype=np.uint8)
    neg = apply_featuremap_mask(feat, ones, zero, zero)
    assert np.array_equal(neg.to_signs(), -feat.to_signs())


def test_featuremap_tiling_matches_element_loop():
    rng = np.random.default_rng(31)
    feat_signs = random_signs(rng, 1176)
    feat = BinaryTensor.from_signs(feat_signs)
    flip = (rng.random(400) < 0.3).astype(np.uint8)
    stuck = (rng.random(400) < 0.2).astype(np.uint8)
    svals = (rng.random(400) < 0.5).astype(np.uint8) & stuck
    got = apply_featuremap_mask(feat, flip, stuck, svals).to_signs()
    for i in range(1176):
        v = feat_signs[i]
        if flip[i % 400]:
            v = -v
        if stuck[i % 400]:
            v = 2 * int(svals[i % 400]) - 1  # stuck wins
        assert got[i] == v


def test_featuremap_stuck_wins_over_flip():
    feat = BinaryTensor.from_signs(np.ones(4, dtype=np.int8))
    ones = np.ones(4, dtype=np.uint8)
    out = apply_featuremap_mask(feat, ones, ones, ones)
    assert np.all(out.to_signs() == 1)


def test_featuremap_zero_length_vector_rejected():
    feat = BinaryTensor.from_signs(np.ones(4, dtype=np.int8))
    with pytest.raises(InjectionError):
        apply_featuremap_mask(feat, np.zeros(0, dtype=np.uint8), [0], [0])


# ---------------------------------------------------------------------------
# whole-model runs
# ---------------------------------------------------------------------------

def small_model(rng):
    conv_w = random_signs(rng, (4, 3, 3, 1))
    dense_w = random_signs(rng, (10, 5 * 5 * 4))
    return ModelGraph(
        "m",
        (12, 12, 1),
        10,
        [
            InputBinarize("bin", 0.5),
            BinaryConv2D("conv_1", BinaryTensor.from_signs(conv_w)),
            MaxPool2D("pool", 2, 2),
            Threshold("bn_1", rng.integers(-3, 3, size=4), rng.choice([-1, 1], size=4)),
            Flatten("flat"),
            BinaryDense("dense_1", BinaryTensor.from_signs(dense_w)),
        ],
    )


def test_zero_fault_identity_all_modes():
    rng = np.random.default_rng(40)
    model = small_model(rng)
    images = rng.random((6, 12, 12, 1))
    _, clean = infer_batch(model, images)
    for mode in ("exact", "fast", "featuremap"):
        ses = InjectionSession(mode, {}, CrossbarConfig(40, 10))
        _, logits = run_with_faults(model, images, ses)
        assert np.array_equal(logits, clean), mode


def test_run_modes_agree_exact_vs_fast():
    rng = np.random.default_rng(41)
    model = small_model(rng)
    images = rng.random((5, 12, 12, 1))
    cfg = CrossbarConfig(9, 4)
    masks = {
        "conv_1": gen_dynamic_mask(9, 4, 0.4, period=2, seed=5, layer_name="conv_1"),
        "dense_1": gen_stuckat_mask(9, 4, 0.3, seed=6, layer_name="dense_1"),
    }
    _, exact = run_with_faults(model, images, InjectionSession("exact", masks, cfg))
    _, fast = run_with_faults(model, images, InjectionSession("fast", masks, cfg))
    assert np.array_equal(exact, fast)


def test_session_rejects_noninjectable_target():
    rng = np.random.default_rng(42)
    model = small_model(rng)
    cfg = CrossbarConfig(9, 4)
    ses = InjectionSession("fast", {"pool": gen_bitflip_mask(9, 4, 0.5, 0, layer_name="pool")}, cfg)
    with pytest.raises(InjectionError):
        run_with_faults(model, np.random.default_rng(0).random((1, 12, 12, 1)), ses)


def test_session_rejects_wrong_mask_dims():
    with pytest.raises(InjectionError):
        InjectionSession("fast", {"c": gen_bitflip_mask(5, 5, 0.5, 0, layer_name="c")}, CrossbarConfig(9, 4))


def test_featuremap_requires_downstream_threshold():
    rng = np.random.default_rng(43)
    model = small_model(rng)
    cfg = CrossbarConfig(9, 4)
    masks = {"dense_1": gen_bitflip_mask(9, 4, 0.5, 1, layer_name="dense_1")}
    with pytest.raises(InjectionError):
        run_with_faults(model, rng.random((1, 12, 12, 1)), InjectionSession("featuremap", masks, cfg))


def test_featuremap_runs_on_conv():
    rng = np.random.default_rng(44)
    model = small_model(rng)
    cfg = CrossbarConfig(9, 4)
    masks = {"conv_1": gen_bitflip_mask(9, 4, 1.0, 1, layer_name="conv_1")}
    images = rng.random((3, 12, 12, 1))
    _, clean = infer_batch(model, images)
    _, fm = run_with_faults(model, images, InjectionSession("featuremap", masks, cfg))
    # full flip of the post-threshold map: dense sees negated input
    assert np.array_equal(fm, -clean)
