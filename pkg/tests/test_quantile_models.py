import numpy as np
import pytest
from conftest import dataset

from pvpost import censored_normal as cn
from pvpost import quantile_models as qm
from pvpost.dataset import (
    SynthConfig,
    daytime_filter,
    split_five_day_blocks,
    synth_generate_with_truth,
)
from pvpost.drn import DrnConfig, fit_drn, predict_drn
from pvpost.errors import DomainError, TrainingError
from pvpost.neural_core import Network, gradient_check
from pvpost.scoring import LEVELS, crps_ensemble, pinball

NONLINEAR = dict(a0=0.1, a1=0.8, b0=0.06, day_spread=1.0, nonlinear_amp=0.12)


def split(d):
    plan = split_five_day_blocks(d, final=True)
    return d.subset(plan.train_indices), d.subset(plan.validation_indices)


def holdout_crps(predict, model, test):
    return float(np.mean(crps_ensemble(predict(model, test.features()).values, test.obs)))


@pytest.fixture(scope="module")
def linear():
    cfg = SynthConfig(days=160, bias=0.1, deflation=0.5, day_spread=0.7)
    d, mu = synth_generate_with_truth(cfg, seed=3)
    keep = np.flatnonzero((d.zenith < 90) & (d.obs > 0))
    d, mu = d.subset(keep), mu[keep]
    tcfg = SynthConfig(days=60, bias=0.1, deflation=0.5, day_spread=0.7)
    t, tmu = synth_generate_with_truth(tcfg, seed=103)
    tkeep = np.flatnonzero((t.zenith < 90) & (t.obs > 0))
    return split(d), (t.subset(tkeep), tmu[tkeep], cfg.b0)


@pytest.fixture(scope="module")
def linear_models(linear):
    (train, val), _ = linear
    return {kind: fit(train, val, seed=1) for kind, (fit, _) in qm.FITTERS.items()}


@pytest.fixture(scope="module")
def nonlinear():
    train = daytime_filter(dataset(days=160, seed=7, **NONLINEAR))
    test = daytime_filter(dataset(days=70, seed=107, **NONLINEAR))
    return split(train), test


def random_net(kind, rng, hp):
    if kind == "bqn":
        net = Network(qm.MlpSpec(51, list(hp.hidden_sizes), hp.activation, hp.degree + 1),
                      seed=int(rng.integers(1 << 31)))
        return qm.BqnModel(net, hp.degree, hp)
    return qm.NcqrnnModel(qm.ncqrnn_network(51, hp, seed=int(rng.integers(1 << 31))), hp)


class TestLosses:
    def test_huber_loss_gradient(self):
        rng = np.random.default_rng(0)
        net = Network(qm.MlpSpec(5, [6], "softplus", 51), seed=0)
        X, y = rng.uniform(size=(10, 5)), rng.uniform(size=10)
        assert gradient_check(net, X, y, qm.quantile_loss(eps=0.01)) < 1e-4

    @pytest.mark.parametrize("degree", [1, 6, 15])
    def test_bqn_loss_gradient(self, degree):
        rng = np.random.default_rng(degree)
        net = Network(qm.MlpSpec(5, [6], "tanh", degree + 1), seed=1)
        X, y = rng.uniform(size=(10, 5)), rng.uniform(size=10)
        assert gradient_check(net, X, y, qm.bqn_loss(degree, eps=0.01)) < 1e-4

    def test_noncrossing_layer_gradient(self):
        rng = np.random.default_rng(2)
        hp = qm.Hyperparams(hidden_sizes=(7,), activation="tanh", nc_width=51)
        net = qm.ncqrnn_network(5, hp, seed=3)
        nc = net.layers[-1]
        nc.W[...] = rng.normal(-1, 0.5, nc.W.shape)
        nc.c[...] = rng.normal(-1, 0.5, nc.c.shape)
        X, y = rng.uniform(size=(10, 5)), rng.uniform(size=10)
        assert gradient_check(net, X, y, qm.quantile_loss(eps=0.01)) < 1e-4

    def test_loss_value_is_mean_pinball_for_tiny_eps(self):
        q = np.tile(LEVELS, (3, 1))
        y = np.array([0.1, 0.5, 0.9])
        value, _ = qm.quantile_loss()(q, y)
        assert value == pytest.approx(np.mean(pinball(LEVELS[None], y[:, None] - q)), abs=1e-8)


class TestBernstein:
    def test_examples(self):
        assert qm.bernstein_eval([0, 1], 0.25) == pytest.approx(0.25)
        assert qm.bernstein_eval([0.2, 0.7], 0.4) == pytest.approx(0.2 + 0.5 * 0.4)
        assert qm.bernstein_eval([0, 0.5, 1], 0.5) == pytest.approx(0.5)
        np.testing.assert_allclose(qm.bernstein_eval(np.full(9, 0.3), LEVELS), 0.3, rtol=1e-12)

    def test_rejects_tau_outside_unit_interval(self):
        with pytest.raises(DomainError):
            qm.bernstein_eval([0, 1], 1.5)

    def test_survival_form_matches_direct_sum(self):
        rng = np.random.default_rng(4)
        raw = rng.normal(size=(20, 13))
        q, _ = qm._bqn_quantiles(raw, qm._survival_basis(12, LEVELS))
        direct = qm.bernstein_eval(qm.bqn_coefficients(raw)[:, None, :], LEVELS[None, :])
        np.testing.assert_allclose(q, direct, atol=1e-12)

    def test_constant_head(self):
        hp = qm.Hyperparams(hidden_sizes=(4,), degree=6)
        m = random_net("bqn", np.random.default_rng(0), hp)
        out = m.net.layers[-1]
        out.W[...] = 0
        out.b[...] = -1e3
        out.b[0] = 0.5
        assert np.all(qm.predict_bqn(m, np.ones((3, 51))).values == 0.5)
        out.b[0] = 1.4
        assert np.all(qm.predict_bqn(m, np.ones((3, 51))).values == 1.0)


class TestRepair:
    def test_predict_lqr_examples(self):
        coef = np.zeros((52, 51))
        m = qm.LqrModel(coef)
        X = np.random.default_rng(0).uniform(size=(4, 51))
        assert np.all(qm.predict_lqr(m, X).values == 0)
        coef[1:] = np.eye(51)
        np.testing.assert_array_equal(qm.predict_lqr(m, X).values, np.sort(X, axis=1))

    def test_crossing_pair_is_swapped(self):
        assert qm._repair(np.array([0.3, 0.2])).tolist() == [0.2, 0.3]

    def test_repair_is_idempotent_sort(self):
        q = np.random.default_rng(1).uniform(-0.2, 1.2, (50, 51))
        once = qm._repair(q)
        np.testing.assert_array_equal(qm._repair(once), once)
        np.testing.assert_array_equal(np.sort(once, axis=None), np.sort(np.clip(q, 0, 1), axis=None))

    def test_predict_qrnn_examples(self):
        net = qm.qrnn_network(51, qm.Hyperparams(hidden_sizes=(5,)))
        for p in net.params():
            p[...] = 0
        assert np.all(qm.predict_qrnn(net, np.ones((2, 51))).values == 0)
        net.layers[-1].b[...] = 1.2
        assert np.all(qm.predict_qrnn(net, np.ones((2, 51))).values == 1.0)

    def test_random_qrnn_outputs_monotone(self):
        rng = np.random.default_rng(2)
        for i in range(20):
            net = qm.qrnn_network(51, qm.Hyperparams(hidden_sizes=(8,)), seed=i)
            q = qm.predict_qrnn(net, rng.normal(size=(50, 51))).values
            assert np.all(np.diff(q, axis=1) >= 0)


class TestStructuralMonotonicity:
    @pytest.mark.parametrize("kind", ["bqn", "ncqrnn"])
    def test_random_parameters_and_inputs(self, kind):
        rng = np.random.default_rng(5)
        predict = qm.FITTERS[kind][1]
        for i in range(10):
            hp = qm.Hyperparams(hidden_sizes=(int(rng.integers(5, 40)),),
                                activation=str(rng.choice(qm.HIDDEN_ACTIVATIONS)),
                                degree=int(rng.integers(6, 16)), nc_width=int(rng.integers(51, 61)))
            m = random_net(kind, rng, hp)
            for p in m.net.params():
                p[...] = rng.normal(0, 2, p.shape)
            raw = m.net.forward(rng.normal(0, 3, (100, 51)))
            if kind == "bqn":
                raw, _ = qm._bqn_quantiles(raw, qm._survival_basis(m.degree, m.levels))
            assert np.all(np.diff(raw, axis=1) >= 0)
            assert np.all(np.diff(predict(m, rng.uniform(size=(100, 51))).values, axis=1) >= 0)

    def test_noncrossing_width_below_levels(self):
        with pytest.raises(DomainError):
            qm.ncqrnn_network(51, qm.Hyperparams(nc_width=50))


class TestLqr:
    def test_recovers_single_member(self):
        rng = np.random.default_rng(0)
        X = np.sort(rng.uniform(0, 1, (3000, 51)), axis=1)
        y = X[:, 7]
        Xv = np.sort(rng.uniform(0, 1, (600, 51)), axis=1)
        m = qm.fit_lqr((X, y), (Xv, Xv[:, 7]), seed=0)
        median = qm.predict_lqr(m, Xv).values[:, 25]
        assert np.mean(np.abs(median - Xv[:, 7])) < 0.01

    def test_conditional_median(self):
        rng = np.random.default_rng(1)
        n = 10_000
        X = np.sort(rng.uniform(0.3, 0.7, (n, 51)) * 0.2 + rng.uniform(0, 0.8, (n, 1)), axis=1)
        fbar = X.mean(axis=1)
        y = fbar + rng.normal(0, 0.1, n)
        Xv = X[:2000]
        m = qm.fit_lqr((X[2000:], y[2000:]), (Xv, y[:2000]), seed=0)
        med = qm.predict_lqr(m, Xv).values[:, 25]
        inside = (fbar[:2000] > 0.15) & (fbar[:2000] < 0.85)  # away from the [0, 1] clip
        assert np.sqrt(np.mean((med - fbar[:2000])[inside] ** 2)) < 0.02

    def test_constant_target(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(size=(400, 51))
        m = qm.fit_lqr((X, np.full(400, 0.37)), (X[:100], np.full(100, 0.37)), seed=0)
        np.testing.assert_allclose(qm.predict_lqr(m, X).values, 0.37, atol=0.01)

    def test_too_few_cases(self):
        X = np.zeros((50, 51))
        with pytest.raises(DomainError):
            qm.fit_lqr((X, np.zeros(50)), (X, np.zeros(50)))

    def test_round_trip(self, linear_models):
        m = linear_models["lqr"]
        back = qm.LqrModel.from_dict(m.to_dict())
        np.testing.assert_array_equal(back.coefficients, m.coefficients)


class TestTrainedModels:
    def test_values_in_unit_interval_and_monotone(self, linear_models, linear):
        _, (test, _, _) = linear
        for kind, m in linear_models.items():
            q = qm.FITTERS[kind][1](m, test.features()).values
            assert np.all((q >= 0) & (q <= 1)), kind
            assert np.all(np.diff(q, axis=1) >= 0), kind

    def test_quantile_scores_near_truth(self, linear_models, linear):
        _, (test, mu, b0) = linear
        for tau in (0.1, 0.5, 0.9):
            k = int(np.argmin(np.abs(LEVELS - tau)))
            truth = cn.quantile(LEVELS[k], cn.CensoredNormalParams(mu, b0))
            best = np.mean(pinball(LEVELS[k], test.obs - truth))
            for kind, m in linear_models.items():
                q = qm.FITTERS[kind][1](m, test.features()).values[:, k]
                assert np.mean(pinball(LEVELS[k], test.obs - q)) < 1.1 * best, (kind, tau)

    def test_round_trips(self, linear_models, linear):
        _, (test, _, _) = linear
        for kind in ("qrnn", "bqn", "ncqrnn"):
            m = linear_models[kind]
            back = type(m).from_dict(m.to_dict())
            predict = qm.FITTERS[kind][1]
            np.testing.assert_array_equal(predict(back, test.features()).values,
                                          predict(m, test.features()).values)

    def test_bqn_close_to_drn(self, linear_models, linear):
        (train, val), (test, _, _) = linear
        drn = fit_drn(train, val, DrnConfig(n_networks=3, seed=2), threads=3)
        drn_crps = np.mean(cn.crps_closed_form(predict_drn(drn, test.features()), test.obs))
        bqn_crps = holdout_crps(qm.predict_bqn, linear_models["bqn"], test)
        assert abs(bqn_crps / drn_crps - 1) < 0.05

    def test_ncqrnn_close_to_qrnn(self, linear_models, linear):
        _, (test, _, _) = linear
        a = holdout_crps(qm.predict_ncqrnn, linear_models["ncqrnn"], test)
        b = holdout_crps(qm.predict_qrnn, linear_models["qrnn"], test)
        assert abs(a / b - 1) < 0.05


class TestNonlinear:
    def test_qrnn_beats_lqr(self, nonlinear):
        (train, val), test = nonlinear
        loss = qm.quantile_loss()
        lqr = qm.fit_lqr(train, val, seed=0)
        qrnn = qm.fit_qrnn(train, val, seed=0)
        a = loss(qm.predict_qrnn(qrnn, test.features()).values, test.obs)[0]
        b = loss(qm.predict_lqr(lqr, test.features()).values, test.obs)[0]
        assert a < b


class TestBoundaries:
    def test_smallest_network(self, small_day_data):
        train, val = split(small_day_data)
        hp = qm.Hyperparams(hidden_sizes=(5,), max_epochs=20)
        m = qm.fit_qrnn(train, val, hp, seed=0)
        assert np.isfinite(m.history.best_val_loss)

    @pytest.mark.parametrize("degree", [6, 15])
    def test_bqn_degrees(self, small_day_data, degree):
        train, val = split(small_day_data)
        hp = qm.Hyperparams(hidden_sizes=(16,), degree=degree, max_epochs=30)
        m = qm.fit_bqn(train, val, hp, seed=0)
        assert np.isfinite(holdout_crps(qm.predict_bqn, m, val))

    def test_minimal_noncrossing_width(self, small_day_data):
        train, val = split(small_day_data)
        hp = qm.Hyperparams(hidden_sizes=(16,), nc_width=51, max_epochs=30)
        m = qm.fit_ncqrnn(train, val, hp, seed=0)
        assert m.nc_width == 51 and np.isfinite(holdout_crps(qm.predict_ncqrnn, m, val))

    def test_seeded_rerun(self, small_day_data):
        train, val = split(small_day_data)
        hp = qm.Hyperparams(hidden_sizes=(8,), max_epochs=10)
        a = qm.fit_qrnn(train, val, hp, seed=5)
        b = qm.fit_qrnn(train, val, hp, seed=5)
        assert a.history.best_val_loss == b.history.best_val_loss


@pytest.fixture(scope="module")
def search_data():
    return daytime_filter(dataset(days=20, seed=9, bias=0.05, deflation=0.7))


class TestSearch:
    @pytest.fixture
    def data(self, search_data):
        return search_data

    def test_space_sampling_stays_inside(self):
        space = qm.HyperparamSpace()
        rng = np.random.default_rng(0)
        for _ in range(500):
            assert space.contains(space.sample(rng))

    def test_budget_one(self, data):
        space = qm.HyperparamSpace(neurons=(5, 10), batch_size=(200, 400))
        best, log = qm.hyperparameter_search("qrnn", space, 1, data, split_five_day_blocks(data),
                                             seed=3, max_epochs=3)
        assert len(log) == 1 and best.to_dict()["learning_rate"] == log[0]["learning_rate"]

    def test_argmin_and_determinism(self, data):
        space = qm.HyperparamSpace(neurons=(5, 10), batch_size=(200, 400))
        plan = split_five_day_blocks(data)
        runs = [qm.hyperparameter_search("ncqrnn", space, 3, data, plan, seed=4, max_epochs=3,
                                         threads=t) for t in (1, 3)]
        (best, log), (best2, log2) = runs
        assert best == best2 and log == log2
        scores = [r["holdout_crps"] for r in log]
        assert log[int(np.argmin(scores))]["learning_rate"] == best.learning_rate
        assert space.contains(best)

    def test_all_trials_failing(self, data, monkeypatch):
        def broken(*args, **kw):
            raise TrainingError("diverged")

        monkeypatch.setitem(qm.FITTERS, "qrnn", (broken, qm.predict_qrnn))
        with pytest.raises(TrainingError):
            qm.hyperparameter_search("qrnn", qm.HyperparamSpace(), 2, data,
                                     split_five_day_blocks(data))

    def test_unknown_kind(self, data):
        with pytest.raises(DomainError):
            qm.hyperparameter_search("cn-emos", qm.HyperparamSpace(), 1, data,
                                     split_five_day_blocks(data))
