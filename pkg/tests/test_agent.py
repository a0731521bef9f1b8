"""Agent tests: each stage of the GMM sampler against hand computation,
reparameterization moments by Monte Carlo, gradients at frozen noise
against finite differences, dataset construction, and training behavior."""

import numpy as np
import pytest

from mmbrowse.agent import (
    AGENT_FIELDS,
    AgentHyper,
    AgentParams,
    RoundNoise,
    TrainingSample,
    _loss_and_grads_batch,
    build_training_set,
    context_mean,
    cosine_loss,
    decode_samples,
    draw_noise,
    evaluate,
    forward_round,
    gmm_head,
    gumbel_softmax,
    init_agent_params,
    load_agent,
    sample_reparam,
    save_agent,
    train_agent,
)
from mmbrowse.corrnet import CorrNetTrainConfig, ProjectionSpace, train_corrnet
from mmbrowse.errors import (
    ConfigError,
    DegenerateInputError,
    InvalidInputError,
    ParseError,
    ShapeError,
)
from mmbrowse.numerics import finite_difference_gradient, gumbel_noise, stream_rng
from mmbrowse.simulator import DialogSimulator, FsaConfig

from gradcheck import pack_agent, relative_error, unpack_agent


def small_hyper(**kw):
    defaults = dict(n_gaussians=2, tau=1.0, eta=0.1, window=3, n_display=2,
                    batch_size=4, epochs=3, seed=0)
    defaults.update(kw)
    return AgentHyper(**defaults)


class TestContextMean:
    def test_single_vector_identity(self):
        v = stream_rng(1, 0).random(5)
        np.testing.assert_array_equal(context_mean([v], 3), v)

    def test_identical_vectors(self):
        v = stream_rng(2, 0).random(5)
        np.testing.assert_allclose(context_mean([v, v, v], 3), v, atol=1e-15)

    def test_matches_elementwise_mean(self):
        rng = stream_rng(3, 0)
        vs = [rng.random(6) for _ in range(3)]
        got = context_mean(vs, 3)
        for j in range(6):
            assert got[j] == pytest.approx((vs[0][j] + vs[1][j] + vs[2][j]) / 3,
                                           abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            context_mean([], 3)

    def test_overlong_rejected(self):
        v = np.zeros(2)
        with pytest.raises(InvalidInputError):
            context_mean([v] * 4, 3)


class TestGmmHead:
    def test_zero_params(self):
        hyper = small_hyper()
        p = init_agent_params(hyper, 4, stream_rng(4, 0))
        for f in AGENT_FIELDS:
            getattr(p, f)[...] = 0.0
        mus, pi = gmm_head(p, np.array([0.3, 0.1, 0.9, 0.5]))
        np.testing.assert_allclose(mus, 0.5, atol=1e-15)
        np.testing.assert_allclose(pi, 0.5, atol=1e-15)

    def test_matches_hand_computation(self):
        p = AgentParams(
            W_mu=np.array([[[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.5], [0.0, 2.0]]]),
            b_mu=np.array([[0.1, -0.1], [0.0, 0.2]]),
            L=np.zeros((2, 2, 2)),
            W_g=np.array([[1.0, -1.0], [0.5, 0.5]]),
            b_g=np.array([0.0, 0.1]),
        )
        h = np.array([0.4, 0.6])
        mus, pi = gmm_head(p, h)
        sig = lambda x: 1 / (1 + np.exp(-x))
        np.testing.assert_allclose(mus[0], [sig(0.5), sig(0.5)], atol=1e-12)
        np.testing.assert_allclose(mus[1], [sig(0.5), sig(1.4)], atol=1e-12)
        v = np.array([0.4 - 0.6, 0.5 * 0.4 + 0.5 * 0.6 + 0.1])
        e = np.exp(v - v.max())
        np.testing.assert_allclose(pi, e / e.sum(), atol=1e-12)

    def test_pi_strictly_positive(self):
        hyper = small_hyper(n_gaussians=3)
        p = init_agent_params(hyper, 6, stream_rng(5, 0))
        for _ in range(20):
            _, pi = gmm_head(p, stream_rng(6, 0).random(6))
            assert np.all(pi > 0.0)


class TestGumbelSoftmax:
    def test_uniform_pi_equal_noise(self):
        w = gumbel_softmax(np.ones(4) / 4, np.full(4, 0.7), tau=1.0)
        np.testing.assert_allclose(w, 0.25, atol=1e-12)

    def test_small_tau_is_argmax(self):
        w = gumbel_softmax(np.array([0.5, 0.3, 0.2]), np.zeros(3), tau=0.01)
        np.testing.assert_allclose(w, [1.0, 0.0, 0.0], atol=1e-6)

    def test_matches_closed_form(self):
        # w_i = pi_i e^{g_i} / sum_j pi_j e^{g_j} at tau = 1
        pi = np.array([0.5, 0.3, 0.2])
        g = np.array([0.1, -0.2, 0.3])
        expected = pi * np.exp(g)
        expected = expected / expected.sum()
        np.testing.assert_allclose(gumbel_softmax(pi, g, 1.0), expected, atol=1e-12)

    def test_sums_to_one_for_any_tau(self):
        rng = stream_rng(7, 0)
        for _ in range(100):
            pi = rng.dirichlet(np.ones(5))
            g = gumbel_noise(rng, size=5)
            tau = float(rng.uniform(0.01, 10.0))
            w = gumbel_softmax(pi, g, tau)
            assert abs(w.sum() - 1.0) < 1e-9
            assert np.all(w >= 0.0)

    def test_tau_limit_recovers_argmax(self):
        rng = stream_rng(8, 0)
        pi = rng.dirichlet(np.ones(4))
        g = gumbel_noise(rng, size=4)
        hard = np.argmax(np.log(pi) + g)
        for tau in (1.0, 0.3, 0.1, 0.03):
            w = gumbel_softmax(pi, g, tau)
            assert np.argmax(w) == hard
        np.testing.assert_allclose(gumbel_softmax(pi, g, 0.001),
                                   np.eye(4)[hard], atol=1e-9)

    def test_floored_pi_stays_finite(self):
        w = gumbel_softmax(np.array([1.0, 0.0]), np.zeros(2), tau=1.0)
        assert np.all(np.isfinite(w))

    def test_bad_tau_rejected(self):
        with pytest.raises(ConfigError):
            gumbel_softmax(np.ones(2) / 2, np.zeros(2), tau=0.0)


class TestSampleReparam:
    def test_zero_noise_gives_mixture_mean(self):
        rng = stream_rng(9, 0)
        mus = rng.random((3, 4))
        Ls = rng.random((3, 4, 4))
        w = rng.dirichlet(np.ones(3))
        got = sample_reparam(mus, Ls, w, np.zeros(4))
        np.testing.assert_allclose(got, w @ mus, atol=1e-12)

    def test_one_hot_zero_factor(self):
        mus = stream_rng(10, 0).random((2, 3))
        got = sample_reparam(mus, np.zeros((2, 3, 3)), np.array([0.0, 1.0]),
                             np.ones(3))
        np.testing.assert_array_equal(got, mus[1])

    def test_monte_carlo_covariance(self):
        # fixed one-hot w: sample covariance converges to L L^T
        rng = stream_rng(11, 0)
        k = 8
        L = rng.normal(0, 0.3, size=(k, k))
        mu = rng.random(k)
        mus = np.stack([mu, np.zeros(k)])
        Ls = np.stack([L, np.zeros((k, k))])
        w = np.array([1.0, 0.0])
        draws = 10**5
        eps = rng.standard_normal((draws, k))
        samples = mus[0] + eps @ L.T
        for _ in range(3):  # spot-check the op against the vectorized draw
            j = int(rng.integers(draws))
            np.testing.assert_allclose(sample_reparam(mus, Ls, w, eps[j]),
                                       samples[j], atol=1e-12)
        np.testing.assert_allclose(samples.mean(axis=0), mu, atol=1e-2)
        cov = np.cov(samples.T, bias=True)
        target = L @ L.T
        rel = np.linalg.norm(cov - target) / np.linalg.norm(target)
        assert rel < 0.05

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            sample_reparam(np.ones((2, 3)), np.ones((2, 3, 3)),
                           np.ones(3), np.zeros(3))


class TestCosineLoss:
    def test_identical_vectors_minimum(self):
        v = stream_rng(12, 0).random(5) + 0.1
        Y = np.stack([v, v])
        assert cosine_loss(Y, Y) == pytest.approx(-1.0, abs=1e-12)

    def test_orthogonal_sets_zero(self):
        Y_hat = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        Y = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]])
        assert cosine_loss(Y_hat, Y) == 0.0

    def test_matches_hand_2x2(self):
        Y_hat = np.array([[1.0, 0.0], [1.0, 1.0]])
        Y = np.array([[0.0, 1.0], [1.0, 0.0]])
        cos = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                cos[i, j] = (Y[i] @ Y_hat[j]) / (
                    np.linalg.norm(Y[i]) * np.linalg.norm(Y_hat[j]))
        assert cosine_loss(Y_hat, Y) == pytest.approx(-cos.mean(), abs=1e-12)

    def test_bounded(self):
        rng = stream_rng(13, 0)
        for _ in range(50):
            Y_hat = rng.standard_normal((4, 6))
            Y = rng.standard_normal((4, 6))
            assert -1.0 <= cosine_loss(Y_hat, Y) <= 1.0

    def test_zero_vector_degenerate(self):
        with pytest.raises(DegenerateInputError):
            cosine_loss(np.zeros((2, 3)), np.ones((2, 3)))


class TestForwardRound:
    def test_single_display_composes_ops(self):
        hyper = small_hyper(n_display=1)
        k = 4
        p = init_agent_params(hyper, k, stream_rng(14, 0))
        window = (stream_rng(15, 0).random(k),)
        noise = draw_noise(stream_rng(16, 0), 1, 2, k)
        y_hat, cache = forward_round(p, hyper, TrainingSample(window, np.ones((1, k))),
                                     noise=noise)
        h = context_mean(window, hyper.window)
        mus, pi = gmm_head(p, h)
        w = gumbel_softmax(pi, noise.g[0], hyper.tau)
        expected = sample_reparam(mus, p.L, w, noise.eps[0])
        np.testing.assert_allclose(y_hat[0], expected, atol=1e-12)

    def test_seeded_repeat_identical(self):
        hyper = small_hyper(n_display=3)
        k = 5
        p = init_agent_params(hyper, k, stream_rng(17, 0))
        sample = TrainingSample((np.full(k, 0.4),), np.ones((3, k)))
        a, _ = forward_round(p, hyper, sample, rng=stream_rng(18, 0))
        b, _ = forward_round(p, hyper, sample, rng=stream_rng(18, 0))
        np.testing.assert_array_equal(a, b)

    def test_gradients_match_finite_differences_frozen_noise(self):
        for trial in range(20):
            rng = stream_rng(200 + trial, 0)
            k = int(rng.integers(2, 9))
            hyper = small_hyper(n_gaussians=2, n_display=2)
            p = init_agent_params(hyper, k, rng)
            B = int(rng.integers(1, 4))
            H = rng.random((B, k))
            Y = rng.random((B, 2, k)) + 0.05
            G = gumbel_noise(rng, size=(B, 2, 2))
            E = rng.standard_normal((B, 2, k))
            _, grads = _loss_and_grads_batch(p, hyper, H, Y, G, E)
            analytic = np.concatenate([grads[f].ravel() for f in AGENT_FIELDS])
            fd = finite_difference_gradient(
                lambda v: _loss_and_grads_batch(
                    unpack_agent(v, p), hyper, H, Y, G, E, want_grads=False)[0],
                pack_agent(p), h=1e-6)
            assert relative_error(analytic, fd) < 1e-4


@pytest.fixture(scope="module")
def trained_space(encoded):
    res = train_corrnet(encoded, CorrNetTrainConfig(k=12, epochs=25, seed=31))
    return ProjectionSpace(res.params, res.stats, encoded)


@pytest.fixture(scope="module")
def sessions(vocab, products, encoded):
    return DialogSimulator(vocab, products, encoded, FsaConfig()).generate(80, seed=32)


class TestBuildTrainingSet:
    def test_window_lengths(self, sessions, trained_space, vocab):
        hyper = AgentHyper(window=3)
        train, test = build_training_set(sessions, trained_space, vocab, hyper)
        samples = train + test
        by_key = {(s.session_id, s.round_index): s for s in samples}
        for session in sessions:
            for r, rnd in enumerate(session.rounds):
                s = by_key[(session.session_id, r)]
                assert len(s.window) == min(r + 1, 3)
                assert s.truth.shape == (6, trained_space.k)

    def test_window_slice_is_most_recent(self, sessions, trained_space, vocab):
        hyper = AgentHyper(window=3)
        long_session = next(s for s in sessions if len(s.rounds) >= 5)
        train, test = build_training_set([long_session], trained_space, vocab, hyper)
        samples = sorted(train + test, key=lambda s: s.round_index)
        s3, s4 = samples[3], samples[4]
        # round 4's window = projections of rounds 2, 3, 4
        np.testing.assert_array_equal(s4.window[0], s3.window[1])
        np.testing.assert_array_equal(s4.window[1], s3.window[2])

    def test_split_fractions(self, trained_space, vocab):
        from mmbrowse.agent import _split_train
        ids = [f"S{i:05d}" for i in range(5000)]
        frac = sum(_split_train(s) for s in ids) / 5000
        assert abs(frac - 0.70) < 0.02

    def test_missing_product_raises(self, sessions, trained_space, vocab):
        from dataclasses import replace
        from mmbrowse.errors import DataError
        bad_round = replace(sessions[0].rounds[0],
                            displayed=("PXXXXXX",) * 6)
        bad = replace(sessions[0], rounds=(bad_round,))
        with pytest.raises(DataError):
            build_training_set([bad], trained_space, vocab, AgentHyper())


class TestTrainAgent:
    def _samples(self, sessions, trained_space, vocab, hyper):
        train, test = build_training_set(sessions, trained_space, vocab, hyper)
        return train, test

    def test_zero_epochs_returns_init(self, sessions, trained_space, vocab):
        hyper = AgentHyper(epochs=0, seed=33)
        train, _ = self._samples(sessions, trained_space, vocab, hyper)
        res = train_agent(train, hyper)
        expected = init_agent_params(hyper, trained_space.k, stream_rng(33, 4, 0))
        for f in AGENT_FIELDS:
            np.testing.assert_array_equal(getattr(res.params, f),
                                          getattr(expected, f))

    def test_deterministic(self, sessions, trained_space, vocab):
        hyper = AgentHyper(epochs=2, seed=34)
        train, _ = self._samples(sessions, trained_space, vocab, hyper)
        a = train_agent(train, hyper)
        b = train_agent(train, hyper)
        for f in AGENT_FIELDS:
            np.testing.assert_array_equal(getattr(a.params, f), getattr(b.params, f))
        assert a.losses == b.losses

    def test_loss_improves(self, sessions, trained_space, vocab):
        hyper = AgentHyper(epochs=15, seed=35, batch_size=16)
        train, _ = self._samples(sessions, trained_space, vocab, hyper)
        res = train_agent(train, hyper)
        assert res.losses[-1] < res.losses[0]

    def test_empty_training_set_rejected(self):
        with pytest.raises(InvalidInputError):
            train_agent([], AgentHyper())


class TestEvaluate:
    def test_perfect_params_score_one(self):
        # if every generated vector equals every truth vector the mean is 1
        hyper = small_hyper(n_display=2)
        k = 4
        v = np.full(k, 0.7)
        sample = TrainingSample((v,), np.stack([v, v]))
        p = init_agent_params(hyper, k, stream_rng(36, 0))
        p.W_mu[...] = 0.0
        p.b_mu[...] = 100.0  # saturate every mu to ~1: direction of truth
        p.L[...] = 0.0
        score = evaluate(p, [sample], hyper, seed=1)
        assert score == pytest.approx(1.0, abs=1e-6)

    def test_untrained_baseline_is_computable(self, sessions, trained_space, vocab):
        hyper = AgentHyper(seed=37)
        train, test = build_training_set(sessions, trained_space, vocab, hyper)
        p = init_agent_params(hyper, trained_space.k, stream_rng(37, 4, 0))
        score = evaluate(p, test or train, hyper, seed=2)
        assert -1.0 <= score <= 1.0


class TestDecodeSamples:
    def test_exact_projection_chooses_product(self, trained_space):
        pid = trained_space.ids[10]
        y = trained_space.image_proj[10][None, :]
        assert decode_samples(y, trained_space)[0] == pid

    def test_distinctness_on_collision(self, trained_space):
        y = np.tile(trained_space.image_proj[10], (3, 1))
        got = decode_samples(y, trained_space)
        assert len(set(got)) == 3
        assert got[0] == trained_space.ids[10]

    def test_matches_greedy_oracle(self):
        rng = stream_rng(38, 0)
        proj = rng.random((5, 4)) + 0.1

        class FakeSpace:
            ids = [f"P{i}" for i in range(5)]
            image_proj = proj

        y_hat = rng.random((3, 4)) + 0.1
        got = decode_samples(y_hat, FakeSpace())
        used = set()
        expected = []
        for j in range(3):
            sims = [
                (-(y_hat[j] @ proj[i]) / (np.linalg.norm(y_hat[j]) * np.linalg.norm(proj[i])),
                 FakeSpace.ids[i]) for i in range(5) if FakeSpace.ids[i] not in used]
            sims.sort()
            expected.append(sims[0][1])
            used.add(sims[0][1])
        assert got == expected

    def test_catalog_too_small_rejected(self):
        class Tiny:
            ids = ["A"]
            image_proj = np.ones((1, 3))

        with pytest.raises(ConfigError):
            decode_samples(np.ones((2, 3)), Tiny())


class TestAgentPersistence:
    def test_round_trip(self, tmp_path):
        hyper = small_hyper(n_gaussians=3, n_display=4)
        p = init_agent_params(hyper, 6, stream_rng(39, 0))
        from mmbrowse.agent import AgentTrainResult
        res = AgentTrainResult(params=p, losses=[0.5, 0.4], hyper=hyper)
        path = tmp_path / "agent.bin"
        save_agent(res, path, metrics={"test_mean_cosine": 0.9})
        loaded, lh = load_agent(path)
        for f in AGENT_FIELDS:
            np.testing.assert_array_equal(getattr(loaded, f), getattr(p, f))
        assert lh.n_gaussians == 3 and lh.tau == hyper.tau
        assert (tmp_path / "agent.bin.json").exists()

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"XXXXXXXX" + b"\x00" * 40)
        with pytest.raises(ParseError):
            load_agent(path)
