import math

import numpy as np
import pytest
import torch

from octcast.errors import EmptyHistory, ShapeMismatch
from octcast.tokens import sinusoidal_table
from octcast.transformer import NEG_INF, Block, Decoder, Encoder, EncoderOutput, attention, encoding_block



@pytest.fixture(autouse=True)
def float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def loop_attention(q, k, v, mask, heads):
    """Scalar-loop reference for multi-head masked attention."""
    n, D = q.shape
    m = k.shape[0]
    d = D // heads
    out = np.zeros((n, D))
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        for i in range(n):
            if all(mask[i, j] <= NEG_INF / 2 for j in range(m)):
                continue
            s = [(sum(q[i, sl][a] * k[j, sl][a] for a in range(d)) + mask[i, j]) / math.sqrt(d) for j in range(m)]
            mx = max(s)
            e = [math.exp(x - mx) for x in s]
            z = sum(e)
            for j in range(m):
                out[i, sl] += e[j] / z * v[j, sl]
    return out


def test_single_key_returns_value():
    q, k, v = torch.randn(1, 4), torch.randn(1, 4), torch.randn(1, 4)
    torch.testing.assert_close(attention(q, k, v, torch.zeros(1, 1), 2), v)


@pytest.mark.parametrize("heads", [1, 2])
def test_attention_matches_loop(heads):
    g = torch.Generator().manual_seed(heads)
    q, k, v = (torch.randn(3, 4, generator=g) for _ in range(3))
    mask = torch.zeros(3, 3)
    mask[0, 2] = NEG_INF
    mask[2] = NEG_INF
    out = attention(q, k, v, mask, heads).numpy()
    np.testing.assert_allclose(out, loop_attention(q.numpy(), k.numpy(), v.numpy(), mask.numpy(), heads), atol=1e-6)
    assert np.all(out[2] == 0)


def test_masked_key_ignored():
    q, k, v = torch.randn(2, 4), torch.randn(3, 4), torch.randn(3, 4)
    mask = torch.zeros(2, 3)
    mask[0, 1] = NEG_INF
    a = attention(q, k, v, mask, 2)
    k2, v2 = k.clone(), v.clone()
    k2[1] += 100 * torch.randn(4)
    v2[1] += 100 * torch.randn(4)
    b = attention(q, k2, v2, mask, 2)
    torch.testing.assert_close(a[0], b[0])


def test_attention_shape_checks():
    with pytest.raises(ShapeMismatch):
        attention(torch.randn(2, 4), torch.randn(3, 5), torch.randn(3, 4), None, 2)
    with pytest.raises(ShapeMismatch):
        attention(torch.randn(2, 6), torch.randn(3, 6), torch.randn(3, 6), None, 4)


def test_zero_block_is_residual():
    blk = Block(8, 2)
    for p in blk.parameters():
        torch.nn.init.zeros_(p)
    x = torch.randn(2, 5, 8)
    torch.testing.assert_close(encoding_block(x, torch.zeros(2, 5, dtype=torch.bool), blk), x)


def test_padded_token_does_not_leak():
    torch.manual_seed(0)
    blk = Block(8, 2).eval()
    x = torch.randn(1, 6, 8)
    pad = torch.tensor([[False, True, False, False, True, False]])
    a = encoding_block(x, pad, blk)
    x2 = x.clone()
    x2[0, 1] += torch.randn(8) * 10
    b = encoding_block(x2, pad, blk)
    torch.testing.assert_close(a[0, ~pad[0]], b[0, ~pad[0]], atol=1e-6, rtol=0)


def test_single_token_stagewise():
    torch.manual_seed(1)
    blk = Block(8, 2).eval()
    x = torch.randn(1, 1, 8)
    q, k, v = blk.qkv(x).chunk(3, -1)
    att = v  # one key: softmax weight is 1
    h = x + att
    want = h + blk.mlp(blk.ln(h))
    torch.testing.assert_close(encoding_block(x, torch.zeros(1, 1, dtype=torch.bool), blk), want)


def test_encoder_zero_blocks_identity():
    x = torch.randn(2, 5, 3, 8)
    pad = torch.zeros(2, 5, 3, dtype=torch.bool)
    assert torch.equal(Encoder(8, 2, 0)(x, pad).Z, x)


def test_encoder_single_block_equals_block():
    torch.manual_seed(2)
    enc = Encoder(8, 2, 1).eval()
    x = torch.randn(1, 5, 1, 8)
    pad = torch.tensor([[[True], [True], [False], [True], [True]]])
    want = encoding_block(x.reshape(1, 5, 8), pad.reshape(1, 5), enc.blocks[0]).reshape(1, 5, 1, 8)
    torch.testing.assert_close(enc(x, pad).Z, want)


def test_encoder_padded_permutation_invariance():
    torch.manual_seed(3)
    enc = Encoder(8, 2, 2).eval()
    x = torch.randn(1, 5, 2, 8)
    pad = torch.zeros(1, 5, 2, dtype=torch.bool)
    pad[0, 1, :] = True
    pad[0, 3, 0] = True
    a = enc(x, pad).Z
    x2 = x.clone()
    x2[0, 1, 0], x2[0, 3, 0] = x[0, 3, 0], x[0, 1, 0]
    b = enc(x2, pad).Z
    valid = ~pad[0]
    torch.testing.assert_close(a[0][valid], b[0][valid], atol=1e-6, rtol=0)


def test_padding_gradient_zero():
    torch.manual_seed(4)
    enc = Encoder(8, 2, 2).eval()
    x = torch.randn(1, 5, 2, 8, requires_grad=True)
    pad = torch.zeros(1, 5, 2, dtype=torch.bool)
    pad[0, 2] = True
    out = enc(x, pad).Z
    out[0][~pad[0]].sum().backward()
    assert x.grad[0, 2].abs().max() == 0


def test_encoder_output_views():
    Z = torch.randn(2, 5, 3, 8)
    e = EncoderOutput(Z, torch.zeros(2, 5, 3, dtype=torch.bool))
    assert torch.equal(e.Z_gT, Z[:, 4, 2]) and torch.equal(e.Z_T, Z[:, :, 2])
    r = e.repeat(3)
    assert r.Z.shape[0] == 6 and torch.equal(r.Z[1], Z[0])


def _enc(B=1):
    Z = torch.randn(B, 5, 3, 8)
    pad = torch.zeros(B, 5, 3, dtype=torch.bool)
    pad[:, 1, -1] = True
    return EncoderOutput(Z, pad)


def test_decoder_causal_and_deterministic():
    torch.manual_seed(5)
    dec = Decoder(8, 2, 2).eval()
    enc = _enc()
    hist = torch.randn(1, 4, 4)
    full = dec(hist, enc)
    for L in range(1, 4):
        torch.testing.assert_close(dec(hist[:, :L], enc), full[:, :L])
        torch.testing.assert_close(dec.decode_step(hist[:, :L], enc), full[:, L - 1])
    hist2 = hist.clone()
    hist2[0, 3] += 5.0
    torch.testing.assert_close(dec(hist2, enc)[:, :3], full[:, :3])
    assert torch.equal(dec(hist, enc), full)


def test_decoder_ignores_padded_last_frame_token():
    torch.manual_seed(6)
    dec = Decoder(8, 2, 1).eval()
    enc = _enc()
    hist = torch.randn(1, 2, 4)
    a = dec(hist, enc)
    Z2 = enc.Z.clone()
    Z2[0, 1, -1] += 10.0
    b = dec(hist, EncoderOutput(Z2, enc.pad_mask))
    torch.testing.assert_close(a, b)


def test_decoder_zero_blocks():
    dec = Decoder(8, 2, 0)
    hist = torch.randn(1, 3, 4)
    want = dec.embed(hist[:, -1]) + sinusoidal_table(3, 8, torch.float64)[2]
    torch.testing.assert_close(dec.decode_step(hist, _enc()), want)


def test_decoder_empty_history():
    with pytest.raises(EmptyHistory):
        Decoder(8, 2, 1)(torch.zeros(1, 0, 4), _enc())
