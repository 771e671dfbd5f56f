"""Decoder training: loss/gradients, prediction, recoverability, serialization."""

import math

import numpy as np
import pytest

from miprobe.corpus import Dump, DumpHeader, Manifest, SentenceRecord
from miprobe.probe import (
    LinearProbe,
    ProbeBatch,
    TrainConfig,
    TrainingDiverged,
    init_probe,
    load_probe,
    loss_and_grad,
    predict_tokens,
    recoverability,
    save_probe,
    train_probe,
)
from miprobe.synth import separable_dump

LN2 = math.log(2)


def random_probe_batch(rng, vocab_size, d, m, scale=1.0):
    probe = LinearProbe(W=scale * rng.standard_normal((vocab_size, d)),
                        b=scale * rng.standard_normal(vocab_size),
                        vocab_size=vocab_size, d=d)
    batch = ProbeBatch(embeddings=rng.standard_normal((m, d)),
                       token_ids=rng.integers(0, vocab_size, size=m))
    return probe, batch


def finite_difference_grads(probe, batch, h=1e-6):
    """Central differences on every parameter; the independent gradient oracle."""
    grad_w = np.zeros_like(probe.W)
    grad_b = np.zeros_like(probe.b)

    def loss_at(W, b):
        p = LinearProbe(W=W, b=b, vocab_size=probe.vocab_size, d=probe.d)
        return loss_and_grad(p, batch)[0]

    for i in range(probe.W.shape[0]):
        for j in range(probe.W.shape[1]):
            up, down = probe.W.copy(), probe.W.copy()
            up[i, j] += h
            down[i, j] -= h
            grad_w[i, j] = (loss_at(up, probe.b) - loss_at(down, probe.b)) / (2 * h)
    for i in range(probe.b.size):
        up, down = probe.b.copy(), probe.b.copy()
        up[i] += h
        down[i] -= h
        grad_b[i] = (loss_at(probe.W, up) - loss_at(probe.W, down)) / (2 * h)
    return grad_w, grad_b


class TestInitProbe:
    def test_zeros_init_gives_zero_logits(self):
        probe = init_probe(4, 9)
        z = probe.logits(np.random.default_rng(0).standard_normal((5, 4)))
        assert np.all(z == 0.0)

    def test_same_seed_identical(self):
        cfg = TrainConfig(weight_init="scaled_gaussian", seed=11)
        a = init_probe(6, 12, cfg)
        b = init_probe(6, 12, cfg)
        assert np.array_equal(a.W, b.W) and np.array_equal(a.b, b.b)

    def test_scaled_gaussian_std(self):
        cfg = TrainConfig(weight_init="scaled_gaussian", seed=0)
        probe = init_probe(10000, 4, cfg)
        assert probe.W.std() == pytest.approx(0.01, rel=0.05)

    def test_invalid_shapes_rejected(self):
        with pytest.raises(ValueError):
            init_probe(0, 10)
        with pytest.raises(ValueError):
            init_probe(4, 1)


class TestLossAndGrad:
    def test_zero_probe_loss_is_m_v_ln2(self):
        rng = np.random.default_rng(1)
        probe = init_probe(7, 23)
        batch = ProbeBatch(embeddings=rng.standard_normal((13, 7)),
                           token_ids=rng.integers(0, 23, size=13))
        loss, _, _ = loss_and_grad(probe, batch)
        assert loss == pytest.approx(13 * 23 * LN2, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            probe, batch = random_probe_batch(rng, vocab_size=6, d=4,
                                              m=int(rng.integers(1, 6)))
            _, gw, gb = loss_and_grad(probe, batch)
            fw, fb = finite_difference_grads(probe, batch)
            num = np.linalg.norm(gw - fw) + np.linalg.norm(gb - fb)
            den = np.linalg.norm(gw) + np.linalg.norm(gb)
            assert num / den < 1e-4

    def test_saturated_logits_near_zero_loss(self):
        # one-hot embeddings with W = 80 I - 40: logits +-40 exactly match O
        v = 8
        W = np.full((v, v), -40.0) + 80.0 * np.eye(v)
        probe = LinearProbe(W=W, b=np.zeros(v), vocab_size=v, d=v)
        ids = np.arange(v)
        batch = ProbeBatch(embeddings=np.eye(v), token_ids=ids)
        loss, _, _ = loss_and_grad(probe, batch)
        assert loss < 1e-6 * v * v

    def test_no_overflow_at_huge_logits(self):
        v, d = 4, 3
        probe = LinearProbe(W=np.full((v, d), 1e4), b=np.zeros(v),
                            vocab_size=v, d=d)
        batch = ProbeBatch(embeddings=np.ones((2, d)), token_ids=np.array([0, 1]))
        loss, gw, gb = loss_and_grad(probe, batch)
        assert math.isfinite(loss)
        assert np.isfinite(gw).all() and np.isfinite(gb).all()

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        probe, batch = random_probe_batch(rng, vocab_size=5, d=4, m=9)
        perm = rng.permutation(9)
        shuffled = ProbeBatch(embeddings=batch.embeddings[perm],
                              token_ids=batch.token_ids[perm])
        l1, gw1, gb1 = loss_and_grad(probe, batch)
        l2, gw2, gb2 = loss_and_grad(probe, shuffled)
        assert l1 == pytest.approx(l2, rel=1e-12)
        assert np.allclose(gw1, gw2, atol=1e-9)
        assert np.allclose(gb1, gb2, atol=1e-9)

    def test_shape_mismatch_rejected(self):
        probe = init_probe(4, 6)
        with pytest.raises(ValueError):
            loss_and_grad(probe, ProbeBatch(embeddings=np.ones((2, 5)),
                                            token_ids=np.array([0, 1])))

    def test_out_of_vocab_target_rejected(self):
        probe = init_probe(4, 6)
        with pytest.raises(ValueError, match="vocabulary"):
            loss_and_grad(probe, ProbeBatch(embeddings=np.ones((1, 4)),
                                            token_ids=np.array([6])))

    def test_nonfinite_embeddings_rejected(self):
        probe = init_probe(2, 4)
        emb = np.array([[1.0, float("nan")]])
        with pytest.raises(ValueError, match="non-finite"):
            loss_and_grad(probe, ProbeBatch(embeddings=emb, token_ids=np.array([0])))


class TestPredictTokens:
    def test_bias_maximum_wins_with_zero_weights(self):
        probe = init_probe(3, 9)
        probe.b[7] = 1.0
        pred = predict_tokens(probe, np.random.default_rng(0).standard_normal((6, 3)))
        assert np.all(pred == 7)

    def test_tie_breaks_to_smallest_id(self):
        probe = init_probe(3, 9)
        pred = predict_tokens(probe, np.zeros((4, 3)))
        assert np.all(pred == 0)

    def test_constant_logit_shift_invariance(self):
        rng = np.random.default_rng(4)
        probe = LinearProbe(W=rng.standard_normal((8, 5)), b=rng.standard_normal(8),
                            vocab_size=8, d=5)
        emb = rng.standard_normal((20, 5))
        base = predict_tokens(probe, emb)
        shifted = LinearProbe(W=probe.W, b=probe.b + 3.7, vocab_size=8, d=5)
        assert np.array_equal(predict_tokens(shifted, emb), base)

    def test_separable_probe_recovers_generating_tokens(self):
        dump = separable_dump(vocab_size=16, n_sentences=200, noise=0.01,
                              seed=5, length_range=(4, 10))
        probe, _ = train_probe(dump, TrainConfig(epochs=5, seed=5))
        rec = dump.records[0]
        assert np.array_equal(predict_tokens(probe, rec.embeddings),
                              rec.tokens.astype(np.int64))


class TestTrainProbe:
    def test_separable_corpus_converges(self):
        dump = separable_dump(vocab_size=16, n_sentences=300, noise=0.01,
                              seed=6, length_range=(4, 10))
        _, report = train_probe(dump, TrainConfig(epochs=5, seed=6))
        assert report.final_val_recoverability >= 0.99
        assert len(report.epoch_mean_loss) <= 5

    def test_single_repeated_sentence_strictly_decreasing(self):
        rng = np.random.default_rng(7)
        base = SentenceRecord(tokens=rng.integers(0, 16, size=6).astype(np.uint32),
                              embeddings=rng.standard_normal((6, 8)).astype(np.float32),
                              layer=0)
        records = [SentenceRecord(tokens=base.tokens.copy(),
                                  embeddings=base.embeddings.copy(),
                                  layer=0, sentence_id=i) for i in range(8)]
        dump = Dump(header=DumpHeader(vocab_size=16, embedding_dim=8, layer=0,
                                      record_count=8), records=records)
        cfg = TrainConfig(epochs=900, batch_size=8, learning_rate=0.1,
                          validation_fraction=0.0, early_stop_patience=0, seed=1)
        _, report = train_probe(dump, cfg)
        losses = report.epoch_mean_loss
        assert all(b < a for a, b in zip(losses, losses[1:]))
        assert losses[-1] < 1e-3 * losses[0]

    def test_deterministic_given_seed(self):
        dump = separable_dump(vocab_size=8, n_sentences=60, noise=0.1, seed=8,
                              length_range=(3, 6))
        cfg = TrainConfig(epochs=3, seed=42)
        p1, _ = train_probe(dump, cfg)
        p2, _ = train_probe(dump, cfg)
        assert np.array_equal(p1.W, p2.W) and np.array_equal(p1.b, p2.b)

    def test_empty_dump_rejected(self):
        dump = Dump(header=DumpHeader(vocab_size=4, embedding_dim=2, layer=0,
                                      record_count=0), records=[])
        with pytest.raises(ValueError, match="empty"):
            train_probe(dump)

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergence_reports_epoch(self):
        dump = separable_dump(vocab_size=8, n_sentences=20, noise=0.5, seed=0,
                              length_range=(3, 5))
        cfg = TrainConfig(epochs=5, learning_rate=1e308, optimizer="sgd",
                          validation_fraction=0.0, early_stop_patience=0)
        with pytest.raises(TrainingDiverged, match="epoch 0"):
            train_probe(dump, cfg)

    def test_validation_recoverability_weakly_increases_on_separable_data(self):
        dump = separable_dump(vocab_size=16, n_sentences=200, noise=0.05,
                              seed=3, length_range=(4, 10))
        _, report = train_probe(dump, TrainConfig(epochs=6, seed=3,
                                                  early_stop_patience=0))
        traj = report.epoch_val_recoverability
        assert all(b >= a for a, b in zip(traj[1:], traj[2:]))

    def test_report_echoes_config_and_manifest(self):
        dump = separable_dump(vocab_size=8, n_sentences=40, noise=0.1, seed=9,
                              length_range=(3, 5))
        cfg = TrainConfig(epochs=2, seed=9)
        _, report = train_probe(dump, cfg)
        assert report.config == cfg.to_dict()
        assert report.trained_on["model_name"] == "synthetic-onehot"
        assert report.first_batch_positions > 0
        assert report.n_train_sentences + report.n_val_sentences == 40


class TestRecoverability:
    def perfect_probe(self, v):
        return LinearProbe(W=10.0 * np.eye(v), b=np.zeros(v), vocab_size=v, d=v)

    def onehot_records(self, tokens_lists, v):
        out = []
        for i, toks in enumerate(tokens_lists):
            emb = np.zeros((len(toks), v), dtype=np.float32)
            emb[np.arange(len(toks)), toks] = 1.0
            out.append(SentenceRecord(tokens=np.array(toks, dtype=np.uint32),
                                      embeddings=emb, layer=0, sentence_id=i))
        return out

    def test_always_correct_probe(self):
        records = self.onehot_records([[0, 1, 2], [3, 3]], v=4)
        result = recoverability(self.perfect_probe(4), records)
        assert result.p_rec == 1.0
        assert result.per_sentence == [1.0, 1.0]

    def test_constant_predictor_scores_token_frequency(self):
        # token 2 at exactly 10% of positions; probe always answers 2
        tokens = [[2, 0, 1, 3, 0], [1, 3, 0, 1, 3]]
        records = self.onehot_records(tokens, v=4)
        probe = init_probe(4, 4)
        probe.b[2] = 5.0
        result = recoverability(probe, records)
        assert result.p_rec == pytest.approx(0.10, abs=1e-12)

    def test_random_probe_near_chance(self):
        rng = np.random.default_rng(10)
        v, d, positions = 100, 16, 20000
        probe = LinearProbe(W=rng.standard_normal((v, d)),
                            b=rng.standard_normal(v), vocab_size=v, d=d)
        records = []
        per = 20
        for i in range(positions // per):
            records.append(SentenceRecord(
                tokens=rng.integers(0, v, size=per).astype(np.uint32),
                embeddings=rng.standard_normal((per, d)).astype(np.float32),
                layer=0, sentence_id=i))
        result = recoverability(probe, records)
        se = math.sqrt(0.01 * 0.99 / positions)
        assert abs(result.p_rec - 0.01) <= 3 * se

    def test_matches_naive_loop_oracle(self):
        rng = np.random.default_rng(11)
        v, d = 7, 5
        probe = LinearProbe(W=rng.standard_normal((v, d)),
                            b=rng.standard_normal(v), vocab_size=v, d=d)
        records = []
        for i in range(30):
            n = int(rng.integers(1, 9))
            records.append(SentenceRecord(
                tokens=rng.integers(0, v, size=n).astype(np.uint32),
                embeddings=rng.standard_normal((n, d)).astype(np.float32),
                layer=0, sentence_id=i))
        result = recoverability(probe, records)
        correct = total = 0
        for rec in records:
            for i in range(rec.n):
                z = probe.W @ rec.embeddings[i].astype(np.float64) + probe.b
                if int(np.argmax(z)) == int(rec.tokens[i]):
                    correct += 1
                total += 1
        assert result.p_rec == correct / total
        assert result.per_position_correct == correct
        assert result.total_positions == total

    def test_empty_record_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            recoverability(init_probe(2, 4), [])

    def test_pooled_records_rejected(self):
        rec = SentenceRecord(tokens=np.array([0, 1]),
                             embeddings=np.zeros((1, 3), dtype=np.float32),
                             layer=0)
        with pytest.raises(ValueError, match="per-position"):
            recoverability(init_probe(3, 4), [rec])


class TestProbeSerialization:
    def test_roundtrip_and_idempotent_bytes(self, tmp_path):
        dump = separable_dump(vocab_size=8, n_sentences=50, noise=0.1, seed=12,
                              length_range=(3, 6))
        probe, _ = train_probe(dump, TrainConfig(epochs=2, seed=12))
        p1 = tmp_path / "a.mipb"
        p2 = tmp_path / "b.mipb"
        save_probe(probe, p1, train_config=TrainConfig(epochs=2, seed=12))
        loaded = load_probe(p1)
        save_probe(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert loaded.vocab_size == probe.vocab_size
        assert loaded.trained_on is not None
        assert np.array_equal(loaded.W, probe.W.astype(np.float32).astype(np.float64))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.mipb"
        path.write_bytes(b"XXXX" + bytes(20))
        with pytest.raises(ValueError, match="magic"):
            load_probe(path)

    def test_truncated_rejected(self, tmp_path):
        dump = separable_dump(vocab_size=4, n_sentences=20, noise=0.1, seed=13,
                              length_range=(3, 4))
        probe, _ = train_probe(dump, TrainConfig(epochs=1, seed=13))
        path = tmp_path / "t.mipb"
        save_probe(probe, path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(ValueError, match="bytes"):
            load_probe(path)
