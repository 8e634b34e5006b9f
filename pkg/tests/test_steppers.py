import numpy as np
import pytest
import scipy.linalg as la

from lowsplit.errors import IllConditionedCoreError, InvalidConfigError
from lowsplit.lowrank import LowRankFactor, TruncationRule, orth, truncate
from lowsplit.odesolve import DenseField, IvpConfig, ZeroField, solve_matrix_ivp
from lowsplit.problems import EntrywiseField, cubic, manufactured, riccati_penzl
from lowsplit.splitting import initial_factor
from lowsplit.steppers import (KINDS, StepperConfig, adgn_step, adrsvd_step, dgn_step, drsvd_step,
                               step)

TIGHT = IvpConfig(rtol=1e-11, atol=1e-13)


def random_factor(rng, n, k):
    return LowRankFactor(orth(rng.standard_normal((n, k))), np.diag(2.0 ** -np.arange(k)),
                         orth(rng.standard_normal((n, k))))


def rel(X, ref):
    return np.linalg.norm(X.dense() - ref) / np.linalg.norm(ref)


@pytest.fixture(scope="module")
def cubic_case():
    x = np.linspace(0, 1, 20)
    X0 = np.tanh(np.add.outer(np.sin(3 * x), np.cos(2 * x))) + 0.3 * np.outer(x, x ** 2)
    N0 = truncate(X0, TruncationRule.fixed(8))
    ref = solve_matrix_ivp(lambda t, Y: cubic(Y), N0.dense(), 0, 0.01,
                           IvpConfig(rtol=1e-12, atol=1e-14))
    return N0, ref


@pytest.mark.parametrize("kind", KINDS)
def test_zero_field_is_identity(kind, rng):
    N0 = random_factor(rng, 25, 5)
    out, rec = step(N0, ZeroField(), 0, 0.1, StepperConfig(kind=kind, rank=5))
    assert out.rank == 5 and rec.rank == 5
    assert np.linalg.norm(out.dense() - N0.dense()) <= 1e-10 * N0.norm()


@pytest.mark.parametrize("kind", KINDS)
def test_manufactured_exactness(kind):
    prob = manufactured()
    exact = prob.meta["exact"](prob.T)
    cfg = StepperConfig(kind=kind, rank=3, oversample=2, extra_oversample=2, ivp=TIGHT, seed=5)
    out, _ = step(prob.X0, prob.F, 0, prob.T, cfg)
    assert rel(out, exact) <= 1e-6


@pytest.mark.parametrize("kind", ["adrsvd", "adgn"])
def test_adaptive_rank_growth(kind):
    prob = manufactured(rank=3, rank_end=8)
    exact = prob.meta["exact"](prob.T)
    out, rec = step(prob.X0, prob.F, 0, prob.T, StepperConfig(kind=kind, ivp=TIGHT, seed=2))
    assert out.rank == 8 == rec.rank
    assert rel(out, exact) <= 1e-6
    assert rec.estimates and rec.basis_sizes[0] >= 8


@pytest.mark.parametrize("stepper", [drsvd_step, dgn_step])
def test_cubic_within_twice_best_rank(stepper, cubic_case):
    N0, ref = cubic_case
    s = la.svdvals(ref)
    best = np.sqrt(np.sum(s[8:] ** 2))
    out, _ = stepper(N0, EntrywiseField(cubic), 0, 0.01, StepperConfig(rank=8, seed=3))
    assert out.rank == 8
    assert np.linalg.norm(out.dense() - ref) <= 2 * best


def test_drsvd_dgn_agree_on_cubic(cubic_case):
    N0, ref = cubic_case
    a, _ = drsvd_step(N0, EntrywiseField(cubic), 0, 0.01, StepperConfig(rank=8, seed=3))
    b, _ = dgn_step(N0, EntrywiseField(cubic), 0, 0.01, StepperConfig(rank=8, seed=3))
    ea, eb = rel(a, ref), rel(b, ref)
    assert f"{ea:.4e}" == f"{eb:.4e}"


def test_adrsvd_adgn_agree_on_riccati_step():
    prob = riccati_penzl(20)
    X = initial_factor(prob.X0, TruncationRule.fixed(10))
    a, _ = adrsvd_step(X, prob.F, 0, 0.1 / 512, StepperConfig(kind="adrsvd", seed=1))
    b, _ = adgn_step(X, prob.F, 0, 0.1 / 512, StepperConfig(kind="adgn", seed=1))
    assert f"{a.norm():.4e}" == f"{b.norm():.4e}"
    assert np.linalg.norm(a.dense() - b.dense()) <= 1e-9 * a.norm()


def test_determinism_and_step_streams(rng):
    N0 = random_factor(rng, 20, 6)
    F = DenseField(lambda t, X: X - X ** 3)
    cfg = StepperConfig(rank=4, seed=11)
    a, _ = drsvd_step(N0, F, 0, 0.05, cfg, step=3)
    b, _ = drsvd_step(N0, F, 0, 0.05, cfg, step=3)
    assert np.array_equal(a.dense(), b.dense())


def test_record_contents(rng):
    N0 = random_factor(rng, 20, 4)
    out, rec = dgn_step(N0, DenseField(lambda t, X: -X), 0.5, 0.1, StepperConfig(rank=4), step=7)
    assert rec.step == 7 and rec.t == pytest.approx(0.6)
    assert rec.stats.solves >= 3
    assert len(rec.basis_sizes) == 2


def test_dgn_ill_conditioned_core():
    # the zero state has a zero reduced core, which has no pseudo-inverse
    with pytest.raises(IllConditionedCoreError):
        dgn_step(LowRankFactor.zeros(20, 20), ZeroField(), 0, 0.1, StepperConfig(kind="dgn", rank=1))


def test_config_validation():
    with pytest.raises(InvalidConfigError):
        StepperConfig(kind="dgn", power_iters=0)
    with pytest.raises(InvalidConfigError):
        StepperConfig(kind="other")
    with pytest.raises(InvalidConfigError):
        StepperConfig(kind="adrsvd", truncation=TruncationRule.fixed(3))
    with pytest.raises(InvalidConfigError):
        drsvd_step(LowRankFactor.zeros(3, 3), ZeroField(), 0, 0.1, StepperConfig(rank=5))
    assert StepperConfig(kind="adgn").rule.mode == "tolerance"
    assert StepperConfig(rank=7).rule.rank == 7
