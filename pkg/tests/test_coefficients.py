import numpy as np
import pytest

from phi4lab.coefficients import (CommonNoise, NoiseBank, NoiseStream, RegularitySpec,
                                  compute_c_A, constant_coefficients, default_specs,
                                  load_coefficients, make_coefficient_set, replica_seed,
                                  sample_noise_increment, save_coefficients,
                                  stack_coefficients, synthesize_holder_field)
from phi4lab.dynamics import SolverConfig, solve_jp
from phi4lab.errors import ConfigurationError
from phi4lab.seminorms import fit_loglog
from phi4lab.spectral import TorusGrid, besov_norm


def test_same_seed_identical():
    g = TorusGrid(1, 64)
    spec = RegularitySpec(0.3, 1.0)
    a = synthesize_holder_field(g, spec, 5).values
    b = synthesize_holder_field(g, spec, 5).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, synthesize_holder_field(g, spec, 6).values)


def test_zero_amplitude_is_offset():
    g = TorusGrid(2, 16)
    f = synthesize_holder_field(g, RegularitySpec(0.3, 0.0, 1.25), 1)
    assert np.all(f.values == 1.25)


def test_besov_resolution_sweep():
    alpha = 0.4
    spec = RegularitySpec(alpha, 1.0)
    at, above = [], []
    for n in (32, 64, 128):
        g = TorusGrid(1, n)
        fs = [synthesize_holder_field(g, spec, s) for s in range(20)]
        at.append(np.median([besov_norm(f, alpha) for f in fs]))
        above.append(np.median([besov_norm(f, alpha + 0.5) for f in fs]))
    assert max(at) / min(at) <= 1.5
    assert above[0] < above[1] < above[2]


def test_spectral_decay_slope():
    g = TorusGrid(1, 256)
    for alpha in (0.3, 1.0):
        spec = RegularitySpec(alpha, 1.0)
        slopes = []
        k = np.arange(1, g.n // 2)
        for s in range(20):
            c = np.abs(g.fft(synthesize_holder_field(g, spec, s).values)) ** 2
            # average over dyadic bands before fitting
            bands = [(2**j, 2 ** (j + 1)) for j in range(1, 7)]
            kc = [np.sqrt(a * b) for a, b in bands]
            pw = [c[a:b].mean() for a, b in bands]
            slopes.append(fit_loglog(kc, pw)[0])
        assert abs(np.median(slopes) + 2 * (alpha + 0.5)) <= 0.3


def test_c_A_for_constant_two():
    g = TorusGrid(1, 32)
    specs = {"A": RegularitySpec(0.9, 0.0, 2.0, 0.5)}
    cs = make_coefficient_set(g, 1.0, 0.1, specs=specs, seed=0)
    assert cs.A_plus == cs.A_minus == 2.0
    assert cs.c_A == 9.0
    assert compute_c_A(2.0, 2.0) == 9.0


def test_default_regularities():
    sp = default_specs(0.05)
    assert sp["A"].alpha == pytest.approx(0.95)
    assert sp["B"].alpha == pytest.approx(-0.05)
    for k in ("Z2", "Z1", "Z0"):
        assert sp[k].alpha == pytest.approx(-0.55)


def test_zero_coefficients_reduce_to_cubic_ode():
    g = TorusGrid(1, 16)
    zero = RegularitySpec(0.0, 0.0)
    specs = {"A": RegularitySpec(0.0, 0.0, 1.0, 1.0), "B": zero, "Z2": zero, "Z1": zero,
             "Z0": zero, "tree": zero}
    cs = make_coefficient_set(g, 0.5, 0.1, specs=specs, seed=3)
    for name in ("B", "Z2", "Z1", "Z0"):
        assert np.all(getattr(cs, name).frames == 0)
    assert np.all(cs.A.frames == 1) and np.all(cs.exp_tree.frames == 1)
    tr = solve_jp(np.full(16, 2.0), cs, SolverConfig(1e-3, 0.5))
    ref = solve_jp(np.full(16, 2.0), constant_coefficients(g, 0.5, A=1.0), SolverConfig(1e-3, 0.5))
    assert np.allclose(tr.frames, ref.frames, atol=1e-14)


def test_A_floor_and_c_A_consistency():
    g = TorusGrid(1, 64)
    cs = make_coefficient_set(g, 2.0, 0.05, seed=4)
    assert cs.A.frames.min() >= 0.5
    assert cs.recompute_c_A() == cs.c_A


def test_coefficient_set_reproducible():
    g = TorusGrid(1, 32)
    a = make_coefficient_set(g, 1.0, 0.1, seed=8)
    b = make_coefficient_set(g, 1.0, 0.1, seed=8)
    for name in ("A", "B", "Z2", "Z1", "Z0", "exp_tree"):
        assert np.array_equal(getattr(a, name).frames, getattr(b, name).frames)


def test_missing_floor_rejected():
    g = TorusGrid(1, 16)
    with pytest.raises(ConfigurationError):
        make_coefficient_set(g, 1.0, 0.1, specs={"A": RegularitySpec(0.9, 0.3, 1.0)})
    with pytest.raises(ConfigurationError):
        make_coefficient_set(g, 1.0, 0.1, specs={"C": RegularitySpec(0.9, 0.3)})


def test_negative_amplitude_rejected():
    with pytest.raises(ConfigurationError):
        RegularitySpec(0.5, -1.0)


def test_save_load_round_trip(tmp_path):
    g = TorusGrid(1, 32)
    cs = make_coefficient_set(g, 1.0, 0.1, seed=2)
    save_coefficients(cs, tmp_path / "c")
    back = load_coefficients(tmp_path / "c")
    assert back.c_A == cs.c_A and back.horizon == cs.horizon
    assert np.array_equal(back.B.frames, cs.B.frames)
    assert np.array_equal(back.exp_tree.frames, cs.exp_tree.frames)


def test_noise_moments():
    g = TorusGrid(1, 16)
    dt = 1e-3
    s = NoiseStream(g, dt, 11)
    x = s.take(10_000)
    target = dt / g.cell_volume
    var = x.var(axis=0)
    assert np.all(np.abs(var / target - 1) < 0.05)
    se = np.sqrt(target / x.shape[0])
    assert np.all(np.abs(x.mean(axis=0)) < 3 * se * 1.5)  # 16 sites, loose family-wise
    a, b = x[:-1, 0], x[1:, 0]
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) < 3 / np.sqrt(a.size)


def test_noise_increment_field():
    g = TorusGrid(2, 8)
    f = sample_noise_increment(NoiseStream(g, 0.01, 1))
    assert f.values.shape == (8, 8)


def test_noise_chunking_irrelevant():
    g = TorusGrid(1, 8)
    a = NoiseStream(g, 0.1, 3, chunk=7)
    b = NoiseStream(g, 0.1, 3, chunk=256)
    xa = np.stack([a.next_array() for _ in range(20)])
    assert np.array_equal(xa, b.take(20))
    c = NoiseStream(g, 0.1, 3, cursor=5)
    assert np.array_equal(c.next_array(), xa[5])


def test_bank_rows_match_replica_streams():
    g = TorusGrid(1, 8)
    bank = NoiseBank(g, 0.1, 9, range(3, 6))
    rows = np.stack([bank.next_array() for _ in range(4)])
    for i, r in enumerate(range(3, 6)):
        ref = NoiseStream(g, 0.1, replica_seed(9, r)).take(4)
        assert np.array_equal(rows[:, i], ref)
    assert replica_seed(9, 0) != replica_seed(9, 1)


def test_common_noise_broadcast():
    g = TorusGrid(1, 8)
    x = CommonNoise(NoiseStream(g, 0.1, 1), 3).next_array()
    assert x.shape == (3, 8) and np.all(x[0] == x[2])


def test_stacked_sets_match_members():
    g = TorusGrid(1, 16)
    sets = [make_coefficient_set(g, 1.0, 0.1, seed=s) for s in range(3)]
    st = stack_coefficients(sets)
    assert st.batch == 3
    for r in range(3):
        assert np.array_equal(st.member_frames("Z0", r), sets[r].Z0.frames)
