"""Risk metrics, quadrature and the repeated-set evaluation protocol."""

import csv

import numpy as np
import pytest
import torch

from deepoed import (
    RiskReport,
    batch_risk,
    evaluate,
    linear_grid,
    log_grid,
    make_model,
    nmse_data,
    nmse_params,
    sem_of_means,
    total_risk,
    trapz_variable,
)
from deepoed.exceptions import DomainError, ShapeError
from deepoed.stochastic import generate_batch, rng_from

DTYPE = torch.float64


class TestNmseParams:
    def test_zero_on_exact(self):
        q = torch.rand(4, 3, dtype=DTYPE) + 0.5
        assert float(nmse_params(q, q)) == 0.0

    def test_hand_computed(self):
        q = torch.tensor([[3.0, 4.0]], dtype=DTYPE)
        q_hat = torch.tensor([[3.0, 9.0]], dtype=DTYPE)
        assert float(nmse_params(q_hat, q)) == pytest.approx(25.0 / 25.0)

    def test_per_sample_normalization(self):
        # Each row is normalized by its own norm before averaging.
        q = torch.tensor([[1.0, 0.0], [10.0, 0.0]], dtype=DTYPE)
        q_hat = q + torch.tensor([[0.1, 0.0], [1.0, 0.0]], dtype=DTYPE)
        expected = 0.5 * (0.01 / 1.0 + 1.0 / 100.0)
        assert float(nmse_params(q_hat, q)) == pytest.approx(expected)

    def test_scale_invariance(self):
        rng = rng_from(0)
        q = torch.as_tensor(rng.uniform(0.5, 1.5, (6, 4)))
        q_hat = q + torch.as_tensor(rng.normal(0, 0.1, (6, 4)))
        a = float(nmse_params(q_hat, q))
        b = float(nmse_params(7.0 * q_hat, 7.0 * q))
        assert a == pytest.approx(b, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nmse_params(torch.zeros(2, 3, dtype=DTYPE),
                        torch.zeros(2, 4, dtype=DTYPE))

    def test_zero_norm_rejected(self):
        with pytest.raises(DomainError):
            nmse_params(torch.ones(1, 2, dtype=DTYPE),
                        torch.zeros(1, 2, dtype=DTYPE))


class TestTrapezoid:
    def test_matches_numpy_on_log_grid(self):
        grid = log_grid(40, 1e3)
        f = np.exp(-0.01 * grid.points) * (1 + grid.points)
        ours = float(trapz_variable(torch.as_tensor(f), grid))
        ref = float(np.trapezoid(f, grid.points))
        assert ours == pytest.approx(ref, rel=1e-13)

    def test_quadratic_on_linear_grid(self):
        grid = linear_grid(200, 100.0)
        f = grid.points**2
        ours = float(trapz_variable(torch.as_tensor(f), grid))
        ref = float(np.trapezoid(f, grid.points))
        assert ours == pytest.approx(ref, rel=1e-13)
        # trapezoid error for f'' = 2 is (b-a) h^2 / 6
        h = grid.points[1] - grid.points[0]
        assert ours - 1e6 / 3.0 == pytest.approx(100.0 * h**2 / 6.0, rel=1e-10)

    def test_constant(self):
        grid = linear_grid(11, 5.0)
        ours = float(trapz_variable(torch.full((11,), 2.0, dtype=DTYPE), grid))
        assert ours == pytest.approx(10.0)

    def test_batch_axis(self):
        grid = linear_grid(7, 3.0)
        f = torch.rand(4, 7, dtype=DTYPE)
        out = trapz_variable(f, grid)
        assert out.shape == (4,)

    def test_length_check(self):
        with pytest.raises(ShapeError):
            trapz_variable(torch.zeros(5, dtype=DTYPE), linear_grid(6, 1.0))


class TestNmseData:
    def test_zero_on_exact(self):
        grid = linear_grid(9, 4.0)
        d = torch.rand(3, 9, dtype=DTYPE) + 0.5
        assert float(nmse_data(d, d, grid)) == 0.0

    def test_scale_invariance(self):
        grid = log_grid(15, 100.0)
        rng = rng_from(1)
        d = torch.as_tensor(rng.uniform(1.0, 2.0, (5, 15)))
        d_hat = d * (1 + 0.05 * torch.as_tensor(rng.normal(0, 1, (5, 15))))
        a = float(nmse_data(d_hat, d, grid))
        b = float(nmse_data(3.0 * d_hat, 3.0 * d, grid))
        assert a == pytest.approx(b, rel=1e-12)

    def test_hand_computed_constant_offset(self):
        grid = linear_grid(11, 10.0)
        d = torch.ones(1, 11, dtype=DTYPE)
        d_hat = d + 0.1
        # integrand ratio is 0.01 everywhere
        assert float(nmse_data(d_hat, d, grid)) == pytest.approx(0.01)


class TestTotalRisk:
    def test_weighting(self):
        assert total_risk(1.0, 0.5, gamma=2.0) == 2.0
        assert total_risk(1.0, 0.5, gamma=0.0) == 1.0


class TestBatchRisk:
    def test_gamma_zero_skips_data_risk(self):
        model = make_model("exp", grid=linear_grid(6, 10.0), substeps=2)
        batch = generate_batch(model, 4, rng_from(0))
        from deepoed import LFENet
        net = LFENet(6, 2, hidden=6, n_layers=2)
        net.initialize(rng_from(1), data_scale=1.0,
                       output_bias=np.asarray(model.prior.mean))
        w = torch.ones(6, dtype=DTYPE)
        l_t, l_q, l_d = batch_risk(model, net, w, batch, gamma=0.0)
        assert l_d is None
        assert float(l_t.detach()) == float(l_q.detach())

    def test_total_combines(self):
        model = make_model("exp", grid=linear_grid(6, 10.0), substeps=2)
        batch = generate_batch(model, 4, rng_from(0))
        from deepoed import LFENet
        net = LFENet(6, 2, hidden=6, n_layers=2)
        net.initialize(rng_from(1), data_scale=1.0,
                       output_bias=np.asarray(model.prior.mean))
        w = torch.ones(6, dtype=DTYPE)
        l_t, l_q, l_d = batch_risk(model, net, w, batch, gamma=3.0)
        assert float(l_t.detach()) == pytest.approx(
            float(l_q.detach()) + 3.0 * float(l_d.detach()))


class TestSem:
    def test_hand_computed(self):
        vals = [1.0, 2.0, 3.0, 4.0]
        expected = np.std(vals, ddof=1) / 2.0
        assert sem_of_means(vals) == pytest.approx(expected)

    def test_single_set_zero(self):
        assert sem_of_means([1.0]) == 0.0

    def test_scales_with_set_count(self):
        rng = rng_from(0)
        base = rng.normal(0, 1, 50)
        many = np.tile(base, 4)
        assert sem_of_means(many) == pytest.approx(
            sem_of_means(base) / 2.0, rel=0.05)


class TestRiskReport:
    def test_from_set_means(self):
        lq = [0.1, 0.2, 0.3]
        ld = [1.0, 1.0, 1.0]
        rep = RiskReport.from_set_means(lq, ld, gamma=2.0, set_size=100,
                                        model="exp", method="x", sparsity=2)
        assert rep.l_q == pytest.approx(0.2)
        assert rep.l_d == pytest.approx(1.0)
        assert rep.l_t == pytest.approx(2.2)
        assert rep.total_samples == 300
        assert rep.sem_l_q == pytest.approx(np.std(lq, ddof=1) / np.sqrt(3))

    def test_csv_round_trip(self, tmp_path):
        rep = RiskReport.from_set_means([0.1, 0.2], [0.3, 0.4], gamma=1.0,
                                        set_size=10, model="ppm",
                                        method="tabu", sparsity=4, seed=5)
        path = tmp_path / "risk.csv"
        RiskReport.write_csv([rep], path)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert rows[0]["model"] == "ppm"
        assert float(rows[0]["l_q"]) == rep.l_q
        assert float(rows[0]["l_T"]) == rep.l_t
        assert int(rows[0]["set_size"]) == 10


@pytest.fixture(scope="module")
def model():
    return make_model("exp", grid=linear_grid(6, 10.0), substeps=2)


class TestEvaluate:

    def test_prior_mean_predictor(self, model):
        mean = np.asarray(model.prior.mean)

        def predictor(d, w, sigma):
            return torch.as_tensor(
                np.broadcast_to(mean, (d.shape[0], 2)).copy(), dtype=DTYPE)

        rep = evaluate(model, predictor, np.ones(6), n_sets=4, set_size=32,
                       gamma=1.0, seed=0, method="stub")
        assert rep.n_sets == 4
        assert rep.total_samples == 128
        assert rep.l_q > 0
        assert np.isfinite(rep.l_d)
        assert rep.method == "stub"

    def test_deterministic_in_seed(self, model):
        def predictor(d, w, sigma):
            return d[:, :2]

        a = evaluate(model, predictor, np.ones(6), n_sets=3, set_size=16, seed=9)
        b = evaluate(model, predictor, np.ones(6), n_sets=3, set_size=16, seed=9)
        assert a.l_q == b.l_q and a.l_d == b.l_d and a.sem_l_t == b.sem_l_t

    def test_seed_changes_sets(self, model):
        def predictor(d, w, sigma):
            return d[:, :2]

        a = evaluate(model, predictor, np.ones(6), n_sets=3, set_size=16, seed=1)
        b = evaluate(model, predictor, np.ones(6), n_sets=3, set_size=16, seed=2)
        assert a.l_q != b.l_q
