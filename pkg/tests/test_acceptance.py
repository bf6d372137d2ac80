"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The heavy end-to-end
criteria share one set of benchmark runs (three Poisson domains, two modes,
three seeds) built once per session.
"""

import json
import time

import numpy as np
import pytest
import torch

from lifecount.config import RunConfig
from lifecount.density import density_from_heads, downsample_density
from lifecount.lifelong import run_lifelong
from lifecount.losses import LossConfig, bdf_loss
from lifecount.metrics import EvalMatrix, mmae, mrmse, nbwt
from lifecount.model import DensityRegressor, snapshot
from lifecount.presets import forgetting_benchmark_config, forgetting_benchmark_specs
from lifecount.synth import generate_domain
from lifecount.transport import OTParams, build_cost_matrix, sinkhorn
from _fixtures import AGGREGATE_ROWS, AGGREGATE_TOL
from oracles import lp_transport_cost, relative_errors


def _announce(number: int, name: str, t0: float) -> None:
    print(f"\nACCEPTANCE {number} {name}: PASS ({time.time() - t0:.1f}s)")


@pytest.fixture(scope="session")
def benchmark_datasets():
    return {s.name: generate_domain(s) for s in forgetting_benchmark_specs()}


@pytest.fixture(scope="session")
def benchmark_runs(benchmark_datasets, tmp_path_factory):
    """Six full runs: {flcb, sequential} x seeds {0, 1, 2}, 20 epochs/domain."""
    root = tmp_path_factory.mktemp("benchmark_runs")
    runs = {}
    for mode in ("flcb", "sequential"):
        for seed in (0, 1, 2):
            cfg = forgetting_benchmark_config(mode=mode, seed=seed)
            runs[(mode, seed)] = run_lifelong(
                cfg, benchmark_datasets, out_dir=root / f"{mode}_{seed}", force=True
            )
    return runs


class TestCriterion1AggregateOracles:
    def test_published_rows_match_printed_means(self):
        t0 = time.time()
        for model_name, method, pairs, printed_mmae, printed_mrmse in AGGREGATE_ROWS:
            maes = [p[0] for p in pairs]
            rmses = [p[1] for p in pairs]
            assert mmae(maes) == pytest.approx(printed_mmae, abs=AGGREGATE_TOL), (model_name, method)
            assert mrmse(rmses) == pytest.approx(printed_mrmse, abs=AGGREGATE_TOL), (model_name, method)
        assert len(AGGREGATE_ROWS) == 16
        _announce(1, "published aggregate oracles (16 rows)", t0)


class TestCriterion2NbwtProperties:
    def test_nbwt_properties(self):
        t0 = time.time()
        # zero forgetting -> 0
        for n in (2, 3, 5):
            rows = [[4.0] * (i + 1) for i in range(n)]
            for i in range(n):
                rows[i] = [4.0] * (i + 1)
            E = _matrix(rows)
            for t in range(2, n + 1):
                assert nbwt(E, t) == 0.0
        # t=2: an all-zero final row sits exactly at -1/(t-1)
        E = _matrix([[7.0], [0.0, 3.0]])
        assert nbwt(E, 2) == -1.0 / (2 - 1)
        # t>=3: every term hits its floor -1/(t-1); the average is exactly -1,
        # and a single zeroed entry contributes exactly -1/(t-1)
        for t in (3, 4):
            rows = [[5.0] * (i + 1) for i in range(t - 1)]
            rows.append([0.0] * (t - 1) + [2.0])
            assert nbwt(_matrix(rows), t) == pytest.approx(-1.0, abs=1e-15)
            rows[-1] = [0.0] + [5.0] * (t - 1)
            assert nbwt(_matrix(rows), t) == pytest.approx(-1.0 / (t - 1), abs=1e-15)
        # scale equivariance to 1e-12
        rng = np.random.default_rng(0)
        rows = [list(rng.uniform(0.5, 30.0, i + 1)) for i in range(4)]
        E = _matrix(rows)
        for c in (1e-6, 0.5, 3.0, 1e6):
            S = _matrix([[v * c for v in row] for row in rows])
            for t in (2, 3, 4):
                assert abs(nbwt(S, t) - nbwt(E, t)) <= 1e-12 * max(1.0, abs(nbwt(E, t)))
        # 1,000 random matrices respect the bound (each term >= -1/(t-1),
        # hence the average >= -1)
        for k in range(1000):
            r = np.random.default_rng(k)
            n = int(r.integers(2, 6))
            rows = [list(r.uniform(0.0, 50.0, i + 1)) for i in range(n)]
            for i in range(n):
                rows[i][i] = float(r.uniform(0.1, 50.0))
            E = _matrix(rows)
            for t in range(2, n + 1):
                assert nbwt(E, t) >= -1.0 - 1e-12
        _announce(2, "nBwT properties (bounds, equivariance, 1000 random)", t0)


def _matrix(rows):
    names = [f"d{i}" for i in range(len(rows[-1]))]
    E = EvalMatrix(domain_names=names)
    for t, row in enumerate(rows, start=1):
        E.set_row(t, row, row)
    return E


class TestCriterion3SinkhornVsLP:
    def test_entropic_cost_matches_lp(self):
        t0 = time.time()
        rng = np.random.default_rng(42)
        shapes = [(1, 8), (2, 4), (2, 3), (1, 5), (2, 2)]
        for k in range(20):
            h, w = shapes[k % len(shapes)]
            C = build_cost_matrix((h, w))
            n = h * w
            mu = rng.dirichlet(np.ones(n))
            nu = rng.dirichlet(np.ones(n))
            res = sinkhorn(mu, nu, C, eps=1e-3, max_iter=200_000, tol=1e-9)
            assert res.converged
            ref = lp_transport_cost(mu, nu, C.cost)
            assert abs(res.cost_value - ref) <= 1e-2 * max(abs(ref), 1e-12), (k, res.cost_value, ref)
        _announce(3, "entropic OT vs exact LP oracle (20 instances)", t0)


class TestCriterion4GradientVerification:
    SOLVER = OTParams(eps=1e-2, max_iter=100_000, tol=1e-12)

    def _state(self, seed):
        """Random loss-level state on an 8x8 grid, away from L1/reg kinks."""
        for attempt in range(50):
            rng = np.random.default_rng([seed, attempt])
            y = rng.uniform(0.3, 1.0, (8, 8))
            yhat = rng.uniform(0.3, 1.0, (8, 8)) * 1.5 + 0.3
            if abs(yhat.sum() - y.sum()) < 1e-3:
                continue
            mu = y / y.sum()
            nu = yhat / yhat.sum()
            if np.abs(mu - nu).min() < 1e-7:
                continue
            t_out = rng.uniform(0.3, 1.0, (8, 8))
            return y, yhat, t_out
        raise RuntimeError("no kink-free state found")

    def test_gradient_wrt_predicted_density(self):
        t0 = time.time()
        cfg = LossConfig(lambda_=0.5, distill_feature=False, ot=self.SOLVER)
        for seed in range(10):
            y, yhat0, t_out = self._state(seed)

            def scalar(v):
                return float(bdf_loss(y, torch.from_numpy(v.copy()), cfg, teacher_out=t_out).total)

            leaf = torch.from_numpy(yhat0.copy()).requires_grad_(True)
            bd = bdf_loss(y, leaf, cfg, teacher_out=t_out)
            bd.total.backward()
            analytic = leaf.grad.numpy().reshape(-1)
            h = 1e-6
            fd = np.empty(64)
            for k in range(64):
                up = yhat0.copy().reshape(-1)
                dn = yhat0.copy().reshape(-1)
                up[k] += h
                dn[k] -= h
                fd[k] = (scalar(up.reshape(8, 8)) - scalar(dn.reshape(8, 8))) / (2 * h)
            assert relative_errors(analytic, fd).max() <= 1e-3, f"state {seed}"
        _announce(4, "gradients vs finite differences (density + parameters)", t0)

    def test_gradient_wrt_all_parameters(self):
        t0 = time.time()
        cfg = LossConfig(lambda_=0.5, ot=self.SOLVER)
        checked = 0
        for seed in range(10):
            rng = np.random.default_rng([77, seed])
            net = DensityRegressor(seed=1000 + seed)
            teacher = snapshot(DensityRegressor(seed=2000 + seed))
            x = torch.from_numpy(rng.uniform(0.2, 1.0, (1, 1, 8, 8)))
            gt = torch.from_numpy(rng.uniform(0.1, 0.6, (1, 2, 2)))

            def total():
                feats, dens = net(x)
                t_feats, t_dens = teacher(x)
                return bdf_loss(
                    gt, dens, cfg, teacher_out=t_dens, teacher_feat=t_feats, student_feat=feats
                ).total

            # guard the L1 count kink for this state
            with torch.no_grad():
                feats, dens = net(x)
            if abs(float(dens.sum()) - float(gt.sum())) < 1e-3:
                continue
            for p in net.parameters():
                p.grad = None
            total().backward()
            coord_rng = np.random.default_rng(seed)
            h = 1e-6
            for name, param in net.named_parameters():
                grad = param.grad.detach().numpy().reshape(-1)
                size = param.numel()
                for idx in coord_rng.choice(size, size=min(6, size), replace=False):
                    orig = float(param.detach().view(-1)[idx])
                    with torch.no_grad():
                        param.view(-1)[idx] = orig + h
                    up = float(total())
                    with torch.no_grad():
                        param.view(-1)[idx] = orig - h
                    down = float(total())
                    with torch.no_grad():
                        param.view(-1)[idx] = orig
                    fd = (up - down) / (2 * h)
                    rel = relative_errors([grad[idx]], [fd]).max()
                    assert rel <= 1e-3, f"state {seed} {name}[{idx}]: {grad[idx]} vs {fd}"
                    checked += 1
        assert checked >= 400  # 8 tensors x up-to-6 coords x >=9 states
        _announce(4, "gradients vs finite differences (parameter side)", t0)


class TestCriterion5MassConservation:
    def test_random_annotation_sets(self):
        t0 = time.time()
        rng = np.random.default_rng(11)
        for _ in range(100):
            k = int(rng.integers(0, 40))
            heads = rng.uniform(0, 31, size=(k, 2))
            d = density_from_heads(heads, (32, 32), sigma=2.0)
            assert abs(d.mass() - k) <= 1e-4
            for factor in (2, 4, 8):
                assert abs(downsample_density(d, factor).mass() - k) <= 1e-4
        _announce(5, "mass conservation (100 annotation sets)", t0)


class TestCriterion6DegeneracyEquivalence:
    def test_lambda_zero_equals_sequential(self, benchmark_datasets, tmp_path):
        t0 = time.time()
        cfg_a = forgetting_benchmark_config(mode="flcb", seed=1, epochs_per_domain=3)
        cfg_a.loss.lambda_ = 0.0
        cfg_b = forgetting_benchmark_config(mode="sequential", seed=1, epochs_per_domain=3)
        a = run_lifelong(cfg_a, benchmark_datasets, out_dir=tmp_path / "lz", force=True)
        b = run_lifelong(cfg_b, benchmark_datasets, out_dir=tmp_path / "seq", force=True)
        log_a = [json.loads(l) for l in open(a.run_dir / "loss_log.jsonl")]
        log_b = [json.loads(l) for l in open(b.run_dir / "loss_log.jsonl")]
        assert len(log_a) == len(log_b)
        for ra, rb in zip(log_a, log_b):
            assert ra.keys() == rb.keys()
            for key in ra:
                va, vb = ra[key], rb[key]
                if isinstance(va, float):
                    assert abs(va - vb) <= 1e-10 * max(abs(va), abs(vb), 1.0), (ra["step"], key)
                else:
                    assert va == vb
        assert np.array_equal(a.eval.mae, b.eval.mae, equal_nan=True)
        assert np.array_equal(a.eval.rmse, b.eval.rmse, equal_nan=True)
        _announce(6, "lambda=0 degeneracy vs sequential baseline", t0)


class TestCriterion7ForgettingReplication:
    def test_distillation_forgets_less_than_sequential(self, benchmark_runs):
        t0 = time.time()
        nbwts = {}
        mmaes = {}
        for mode in ("flcb", "sequential"):
            nbwts[mode] = [nbwt(benchmark_runs[(mode, s)].eval, 3) for s in (0, 1, 2)]
            mmaes[mode] = [mmae(benchmark_runs[(mode, s)].eval.mae[2]) for s in (0, 1, 2)]
        mean_nbwt_flcb = float(np.mean(nbwts["flcb"]))
        mean_nbwt_seq = float(np.mean(nbwts["sequential"]))
        mean_mmae_flcb = float(np.mean(mmaes["flcb"]))
        mean_mmae_seq = float(np.mean(mmaes["sequential"]))
        print(
            f"\n  nBwT_3 per seed: flcb={['%+.3f' % v for v in nbwts['flcb']]}, "
            f"sequential={['%+.3f' % v for v in nbwts['sequential']]}"
        )
        print(f"  mean nBwT_3: flcb {mean_nbwt_flcb:+.4f} vs sequential {mean_nbwt_seq:+.4f}")
        print(f"  mean mMAE:   flcb {mean_mmae_flcb:.3f} vs sequential {mean_mmae_seq:.3f}")
        assert mean_nbwt_flcb < mean_nbwt_seq
        assert mean_mmae_flcb <= 1.05 * mean_mmae_seq
        _announce(7, "desk-scale forgetting replication (3 domains, 3 seeds)", t0)


class TestCriterion8AblationStructure:
    @pytest.mark.parametrize("levels", ["feature", "output", "both"])
    def test_distillation_level_switches(self, benchmark_datasets, tmp_path, levels):
        t0 = time.time()
        cfg = forgetting_benchmark_config(mode="flcb", seed=0, epochs_per_domain=2)
        cfg.loss.distill_feature = levels in ("feature", "both")
        cfg.loss.distill_output = levels in ("output", "both")
        res = run_lifelong(cfg, benchmark_datasets, out_dir=tmp_path / levels, force=True)
        lines = [json.loads(l) for l in open(res.run_dir / "loss_log.jsonl")]
        with_teacher = [l for l in lines if l["phase"] in ("mid", "dense")]
        assert with_teacher
        feature_vals = [l["distill_feature"] for l in with_teacher]
        output_vals = [l["distill_output"] for l in with_teacher]
        if levels in ("feature", "both"):
            assert any(v > 0.0 for v in feature_vals)
        else:
            assert all(v == 0.0 for v in feature_vals)
        if levels in ("output", "both"):
            assert any(v > 0.0 for v in output_vals)
        else:
            assert all(v == 0.0 for v in output_vals)
        _announce(8, f"ablation structure (--distill {levels})", t0)


class TestCriterion9AlgorithmContracts:
    def test_no_replay_and_counters(self, benchmark_runs):
        t0 = time.time()
        for (mode, seed), res in benchmark_runs.items():
            stats = res.stats
            assert stats.replay_violations == 0, (mode, seed)
            assert stats.epochs_total == 3 * 20, (mode, seed)
            # one domain resident at a time (100 train images per domain)
            assert stats.max_resident_train_images == 100, (mode, seed)
            for digest in stats.teacher_digests:
                assert digest["before"] == digest["after"], (mode, seed, digest["step"])
            assert [d["step"] for d in stats.teacher_digests] == [2, 3]
        _announce(9, "no-replay / teacher-freeze / complexity counters", t0)

    def test_joint_retains_union(self, benchmark_datasets, tmp_path):
        t0 = time.time()
        cfg = forgetting_benchmark_config(mode="joint", seed=0, epochs_per_domain=1)
        res = run_lifelong(cfg, benchmark_datasets, out_dir=tmp_path / "joint", force=True)
        assert res.stats.max_resident_train_images == 300  # union of all train splits
        assert res.stats.union_train_images == 300
        assert res.stats.epochs_total == 1
        _announce(9, "joint reference retains the union", t0)
