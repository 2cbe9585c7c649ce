import math

import pytest
import torch

from ocrqa.attention import AttnParams
from ocrqa.relate import (
    RelationalReasoner,
    fuse,
    object_weighted_sum,
    positional_attention,
    semantic_attention,
)
from oracles import attention_bruteforce


def rand(shape, gen):
    return torch.randn(shape, generator=gen, dtype=torch.double)


class TestSemanticAttention:
    def test_single_object(self):
        gen = torch.Generator().manual_seed(0)
        params = AttnParams(4, 3).double()
        token_vecs, object_vecs = rand((5, 4), gen), rand((1, 4), gen)
        out = semantic_attention(token_vecs, object_vecs, params)
        for i in range(5):
            assert torch.allclose(out[i], object_vecs[0])

    def test_identical_object_rows(self):
        gen = torch.Generator().manual_seed(1)
        params = AttnParams(4, 3).double()
        row = rand((1, 4), gen)
        out = semantic_attention(rand((3, 4), gen), row.repeat(4, 1), params)
        for i in range(3):
            assert torch.allclose(out[i], row[0])

    def test_matches_bruteforce(self):
        gen = torch.Generator().manual_seed(2)
        params = AttnParams(4, 2).double()
        token_vecs, object_vecs = rand((2, 4), gen), rand((3, 4), gen)
        out = semantic_attention(token_vecs, object_vecs, params)
        expected = attention_bruteforce(
            token_vecs.numpy(), object_vecs.numpy(), object_vecs.numpy(),
            params.proj.detach().numpy(), params.diag.detach().numpy(),
        )
        assert torch.allclose(out, torch.as_tensor(expected), atol=1e-10)

    def test_no_objects_rejected(self):
        params = AttnParams(4, 2).double()
        with pytest.raises(ValueError):
            semantic_attention(torch.zeros(2, 4).double(), torch.zeros(0, 4).double(), params)


class TestPositionalAttention:
    def test_single_object_ignores_positions(self):
        gen = torch.Generator().manual_seed(3)
        params = AttnParams(8, 4).double()
        token_pos = torch.rand(4, 8, generator=gen, dtype=torch.double)
        object_pos = torch.rand(1, 8, generator=gen, dtype=torch.double)
        object_vecs = rand((1, 5), gen)
        out = positional_attention(token_pos, object_pos, object_vecs, params)
        for i in range(4):
            assert torch.allclose(out[i], object_vecs[0])

    def test_identity_params_make_position_decisive(self):
        # scores reduce to a scaled dot product of the (non-negative)
        # positional vectors, so a token sitting exactly on object A gets
        # nearly all its weight there when A is far from the origin and B
        # hugs it
        params = AttnParams(8, 8).double()
        with torch.no_grad():
            params.proj.copy_(torch.eye(8, dtype=torch.double))
            params.diag.fill_(1.0)
        token_pos = torch.full((1, 8), 0.8, dtype=torch.double)
        object_pos = torch.stack(
            [torch.full((8,), 0.8, dtype=torch.double), torch.full((8,), 0.05, dtype=torch.double)]
        )
        object_vecs = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.double)
        trace = []
        out = positional_attention(token_pos, object_pos, object_vecs, params, trace)
        weight_a = trace[0][0, 0].item()
        score_a = 8 * 0.8 * 0.8
        score_b = 8 * 0.8 * 0.05
        expected = math.exp(score_a) / (math.exp(score_a) + math.exp(score_b))
        assert weight_a == pytest.approx(expected, abs=1e-12)
        assert weight_a > 0.9
        assert torch.allclose(out[0], weight_a * object_vecs[0] + (1 - weight_a) * object_vecs[1])

    def test_matches_bruteforce(self):
        gen = torch.Generator().manual_seed(4)
        params = AttnParams(8, 3).double()
        token_pos = torch.rand(3, 8, generator=gen, dtype=torch.double)
        object_pos = torch.rand(2, 8, generator=gen, dtype=torch.double)
        object_vecs = rand((2, 6), gen)
        out = positional_attention(token_pos, object_pos, object_vecs, params)
        expected = attention_bruteforce(
            token_pos.numpy(), object_pos.numpy(), object_vecs.numpy(),
            params.proj.detach().numpy(), params.diag.detach().numpy(),
        )
        assert torch.allclose(out, torch.as_tensor(expected), atol=1e-10)


class TestFuse:
    def test_zero_positional_gives_semantic(self):
        gen = torch.Generator().manual_seed(5)
        sem = rand((3, 4), gen)
        assert torch.equal(fuse(sem, torch.zeros_like(sem)), sem)

    def test_opposite_terms_cancel(self):
        gen = torch.Generator().manual_seed(6)
        sem = rand((3, 4), gen)
        assert torch.equal(fuse(sem, -sem), torch.zeros_like(sem))

    def test_random_pair_is_elementwise_sum(self):
        gen = torch.Generator().manual_seed(7)
        a, b = rand((2, 3), gen), rand((2, 3), gen)
        expected = torch.as_tensor(a.numpy() + b.numpy())
        assert torch.allclose(fuse(a, b), expected)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            fuse(torch.zeros(2, 3), torch.zeros(3, 2))


class TestWeightedSumBaseline:
    def test_zero_weight_gives_mean(self):
        gen = torch.Generator().manual_seed(8)
        object_vecs = rand((4, 3), gen)
        out = object_weighted_sum(object_vecs, torch.zeros(3, dtype=torch.double))
        assert torch.allclose(out, object_vecs.mean(dim=0))

    def test_single_row(self):
        gen = torch.Generator().manual_seed(9)
        object_vecs = rand((1, 3), gen)
        out = object_weighted_sum(object_vecs, rand((3,), gen))
        assert torch.allclose(out, object_vecs[0])

    def test_hand_softmax(self):
        object_vecs = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.double)
        out = object_weighted_sum(object_vecs, torch.tensor([10.0, 0.0], dtype=torch.double))
        w = math.exp(10) / (math.exp(10) + 1.0)
        assert out[0].item() == pytest.approx(w, abs=1e-7)
        assert out[1].item() == pytest.approx(1 - w, abs=1e-7)


class TestRelationalReasoner:
    def build(self, seed=0, vec_dim=6):
        torch.manual_seed(seed)
        return RelationalReasoner(vec_dim, 4).double()

    def inputs(self, seed=0, o=3, n=2, vec_dim=6):
        gen = torch.Generator().manual_seed(seed)
        return (
            rand((o, vec_dim), gen),
            torch.rand(o, 8, generator=gen, dtype=torch.double),
            rand((n, vec_dim), gen),
            torch.rand(n, 8, generator=gen, dtype=torch.double),
        )

    def test_full_is_sum_of_parts(self):
        reasoner = self.build()
        token_vecs, token_pos, object_vecs, object_pos = self.inputs()
        full = reasoner(token_vecs, token_pos, object_vecs, object_pos, "full")
        sem = reasoner(token_vecs, token_pos, object_vecs, object_pos, "semantic_only")
        pos = reasoner(token_vecs, token_pos, object_vecs, object_pos, "positional_only")
        assert torch.allclose(full, sem + pos)

    def test_none_mode_and_no_objects_give_zeros(self):
        reasoner = self.build()
        token_vecs, token_pos, object_vecs, object_pos = self.inputs()
        zeros = torch.zeros_like(token_vecs)
        assert torch.equal(reasoner(token_vecs, token_pos, object_vecs, object_pos, "none"), zeros)
        assert torch.equal(reasoner(token_vecs, token_pos, None, None, "full"), zeros)

    def test_weighted_sum_broadcasts(self):
        reasoner = self.build()
        token_vecs, token_pos, object_vecs, object_pos = self.inputs()
        out = reasoner(token_vecs, token_pos, object_vecs, object_pos, "weighted_sum")
        assert torch.allclose(out[0], out[1]) and torch.allclose(out[1], out[2])

    def test_object_permutation_invariance(self):
        reasoner = self.build(seed=3)
        token_vecs, token_pos, object_vecs, object_pos = self.inputs(seed=3, n=4)
        perm = torch.tensor([2, 0, 3, 1])
        base = reasoner(token_vecs, token_pos, object_vecs, object_pos, "full")
        permuted = reasoner(token_vecs, token_pos, object_vecs[perm], object_pos[perm], "full")
        assert torch.allclose(base, permuted)

    def test_unknown_mode_rejected(self):
        reasoner = self.build()
        token_vecs, token_pos, object_vecs, object_pos = self.inputs()
        with pytest.raises(ValueError):
            reasoner(token_vecs, token_pos, object_vecs, object_pos, "bogus")

    def test_gradients_match_finite_differences(self):
        reasoner = self.build(seed=5, vec_dim=4)
        gen = torch.Generator().manual_seed(5)
        token_vecs = rand((2, 4), gen)
        token_pos = torch.rand(2, 8, generator=gen, dtype=torch.double)
        object_vecs = rand((3, 4), gen)
        object_pos = torch.rand(3, 8, generator=gen, dtype=torch.double)
        probe = rand((2, 4), gen)

        def objective():
            return (reasoner(token_vecs, token_pos, object_vecs, object_pos, "full") * probe).sum()

        objective().backward()
        eps = 1e-5
        for name, param in reasoner.named_parameters():
            if param.grad is None:
                continue
            grad = param.grad.reshape(-1)
            flat = param.data.reshape(-1)
            for i in range(flat.numel()):
                with torch.no_grad():
                    orig = flat[i].item()
                    flat[i] = orig + eps
                    up = objective().item()
                    flat[i] = orig - eps
                    down = objective().item()
                    flat[i] = orig
                fd = (up - down) / (2 * eps)
                rel = abs(fd - grad[i].item()) / max(abs(fd), abs(grad[i].item()), 1e-3)
                assert rel < 1e-4, f"{name}[{i}]"
