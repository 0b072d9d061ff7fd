"""Bidirectional GRU encoder tests against a scalar step-by-step oracle."""

import math

import numpy as np
import pytest

from hfgcn.dataio import Conversation, Utterance
from hfgcn.encoder import (
    EncodedConversation,
    GruDirection,
    bigru_encode,
    early_fuse,
    encode_conversation,
    gru_cell,
    init_gru,
    stream_matrix,
)
from hfgcn.numerics import Value, grad_check, sum_all


def scalar_gru_step(x, h_prev, p: GruDirection):
    """Plain-python reference for one GRU step (lists in, list out)."""

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    def affine(vec, w):
        cols = w.data.shape[1]
        return [sum(vec[i] * w.data[i, j] for i in range(len(vec))) for j in range(cols)]

    def gate(w, u, b, fn):
        wx = affine(x, w)
        uh = affine(h_prev, u)
        return [fn(wx[j] + uh[j] + b.data[0, j]) for j in range(len(wx))]

    z = gate(p.w_z, p.u_z, p.b_z, sig)
    r = gate(p.w_r, p.u_r, p.b_r, sig)
    rh = [r[j] * h_prev[j] for j in range(len(h_prev))]
    wx = affine(x, p.w_h)
    uh = affine(rh, p.u_h)
    cand = [math.tanh(wx[j] + uh[j] + p.b_h.data[0, j]) for j in range(len(wx))]
    return [(1.0 - z[j]) * h_prev[j] + z[j] * cand[j] for j in range(len(h_prev))]


def zero_direction(input_dim, hidden):
    kw = {}
    for gate in ("z", "r", "h"):
        kw[f"w_{gate}"] = Value(np.zeros((input_dim, hidden)))
        kw[f"u_{gate}"] = Value(np.zeros((hidden, hidden)))
        kw[f"b_{gate}"] = Value(np.zeros((1, hidden)))
    return GruDirection(**kw)


class TestGruCell:
    def test_zero_everything_is_fixed_point(self):
        p = zero_direction(3, 4)
        out = gru_cell(Value(np.zeros((1, 3))), Value(np.zeros((1, 4))), p)
        assert np.array_equal(out.data, np.zeros((1, 4)))

    def test_closed_update_gate_keeps_state(self):
        rng = np.random.default_rng(0)
        p = init_gru(3, 4, rng).fwd
        p.b_z.data[...] = -50.0  # z ~ 0 -> h_next ~ h_prev
        h_prev = rng.standard_normal((1, 4))
        out = gru_cell(Value(rng.standard_normal((1, 3))), Value(h_prev), p)
        np.testing.assert_allclose(out.data, h_prev, atol=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(42)
        p = init_gru(3, 5, rng).fwd
        x = rng.standard_normal(3)
        h = rng.standard_normal(5)
        out = gru_cell(Value(x.reshape(1, -1)), Value(h.reshape(1, -1)), p)
        expected = scalar_gru_step(list(x), list(h), p)
        np.testing.assert_allclose(out.data[0], expected, rtol=0, atol=1e-12)


class TestBigru:
    def test_single_step_sequence(self):
        rng = np.random.default_rng(1)
        p = init_gru(3, 4, rng)
        x = rng.standard_normal((1, 3))
        out = bigru_encode(Value(x), p)
        fwd = gru_cell(Value(x), Value(np.zeros((1, 4))), p.fwd)
        bwd = gru_cell(Value(x), Value(np.zeros((1, 4))), p.bwd)
        np.testing.assert_allclose(out.data, np.concatenate([fwd.data, bwd.data], axis=1), atol=1e-15)

    def test_reversal_symmetry(self):
        # reversing input and swapping direction params flips output halves
        rng = np.random.default_rng(2)
        p = init_gru(3, 4, rng)
        swapped = type(p)(input_dim=3, hidden_dim=4, fwd=p.bwd, bwd=p.fwd)
        x = rng.standard_normal((5, 3))
        out = bigru_encode(Value(x), p).data
        rev = bigru_encode(Value(x[::-1]), swapped).data
        flipped = np.concatenate([rev[::-1, 4:], rev[::-1, :4]], axis=1)
        np.testing.assert_allclose(out, flipped, atol=1e-12)

    def test_matches_unrolled_scalar_oracle(self):
        rng = np.random.default_rng(3)
        p = init_gru(2, 3, rng)
        xs = rng.standard_normal((3, 2))
        out = bigru_encode(Value(xs), p).data
        h = [0.0, 0.0, 0.0]
        fwd = []
        for t in range(3):
            h = scalar_gru_step(list(xs[t]), h, p.fwd)
            fwd.append(h)
        h = [0.0, 0.0, 0.0]
        bwd = [None] * 3
        for t in reversed(range(3)):
            h = scalar_gru_step(list(xs[t]), h, p.bwd)
            bwd[t] = h
        expected = np.array([f + b for f, b in zip(fwd, bwd)])
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)

    def test_empty_sequence_rejected(self):
        p = init_gru(2, 3, np.random.default_rng(0))
        with pytest.raises(ValueError, match="non-empty"):
            bigru_encode(Value(np.zeros((0, 2))), p)


class TestEarlyFuse:
    def test_fixed_order(self):
        u = Utterance(0, np.array([1.0]), np.array([2.0]), np.array([3.0]), 0)
        assert early_fuse(u).tolist() == [1.0, 2.0, 3.0]

    def test_zero_vectors(self):
        u = Utterance(0, np.zeros(2), np.zeros(3), np.zeros(4), 0)
        assert np.array_equal(early_fuse(u), np.zeros(9))

    def test_slicing_inverts(self):
        rng = np.random.default_rng(4)
        u = Utterance(0, rng.standard_normal(2), rng.standard_normal(3), rng.standard_normal(4), 0)
        fused = early_fuse(u)
        assert np.array_equal(fused[:2], u.audio)
        assert np.array_equal(fused[2:5], u.text)
        assert np.array_equal(fused[5:], u.visual)


def make_conversation(n, d=(2, 3, 2), seed=0):
    rng = np.random.default_rng(seed)
    return Conversation(
        "t",
        [
            Utterance(
                t % 2,
                rng.standard_normal(d[0]),
                rng.standard_normal(d[1]),
                rng.standard_normal(d[2]),
                t % 3,
            )
            for t in range(n)
        ],
    )


class TestEncodeConversation:
    def _encoders(self, hidden=4, seed=0):
        rng = np.random.default_rng(seed)
        return {
            "audio": init_gru(2, hidden, rng),
            "text": init_gru(3, hidden, rng),
            "visual": init_gru(2, hidden, rng),
            "fusion": init_gru(7, hidden, rng),
        }

    def test_output_shapes_uniform(self):
        conv = make_conversation(5)
        enc = encode_conversation(conv, self._encoders())
        for stream in (enc.audio, enc.text, enc.visual, enc.fusion):
            assert stream.data.shape == (5, 8)
        assert enc.n == 5 and enc.dim == 8 and enc.has_modalities

    def test_zero_params_zero_input_zero_output(self):
        conv = Conversation(
            "z",
            [Utterance(0, np.zeros(2), np.zeros(3), np.zeros(2), 0) for _ in range(3)],
        )
        encoders = {
            name: type(self._encoders()["audio"])(
                input_dim=d, hidden_dim=4, fwd=zero_direction(d, 4), bwd=zero_direction(d, 4)
            )
            for name, d in (("audio", 2), ("text", 3), ("visual", 2), ("fusion", 7))
        }
        enc = encode_conversation(conv, encoders)
        assert np.array_equal(enc.fusion.data, np.zeros((3, 8)))
        assert np.array_equal(enc.audio.data, np.zeros((3, 8)))

    def test_independent_of_other_conversations(self):
        encoders = self._encoders()
        conv = make_conversation(4, seed=1)
        a = encode_conversation(conv, encoders).fusion.data
        encode_conversation(make_conversation(6, seed=2), encoders)
        b = encode_conversation(conv, encoders).fusion.data
        assert np.array_equal(a, b)

    def test_gradients_pass_finite_difference_check(self):
        conv = make_conversation(3, seed=5)
        encoders = {"fusion": init_gru(7, 3, np.random.default_rng(6))}

        def loss_fn():
            enc = encode_conversation(conv, encoders)
            return sum_all(enc.fusion)

        params = [v for _, v in encoders["fusion"].named_values("fusion")]
        assert grad_check(loss_fn, params, coords_per_param=3) < 1e-3

    def test_dim_mismatch_names_stage(self):
        conv = make_conversation(3)
        encoders = {"fusion": init_gru(9, 4, np.random.default_rng(0))}
        with pytest.raises(ValueError, match="encoder stage"):
            encode_conversation(conv, encoders)

    def test_stream_matrix_stacks(self):
        conv = make_conversation(4)
        assert stream_matrix(conv, "audio").shape == (4, 2)
        assert stream_matrix(conv, "fusion").shape == (4, 7)
