import pytest
import torch

from ocrqa.attention import AttnParams
from ocrqa.corpus import Quad, SceneObject
from ocrqa.encoders import (
    BiLstmStack,
    ContextUnderstanding,
    QuestionUnderstanding,
    pool_segments,
    word_level_attention,
)
from oracles import attention_bruteforce


def rand(shape, gen):
    return torch.randn(shape, generator=gen, dtype=torch.double)


def make_question_encoder(wd=8, d_h=8, k=8, seed=0):
    torch.manual_seed(seed)
    return QuestionUnderstanding(wd, d_h, k).double()


def make_context_encoder(wd=8, d_h=8, k=8, layers=2, seed=1):
    torch.manual_seed(seed)
    return ContextUnderstanding(wd, d_h, k, layers).double()


def feats(m):
    return torch.zeros(m, 2, dtype=torch.long)


class TestBiLstmStack:
    def test_per_layer_shapes(self):
        torch.manual_seed(0)
        stack = BiLstmStack(6, 8, 3).double()
        outs = stack(torch.randn(5, 6, dtype=torch.double))
        assert len(outs) == 3
        assert all(o.shape == (5, 8) for o in outs)

    def test_odd_hidden_rejected(self):
        with pytest.raises(ValueError):
            BiLstmStack(6, 7, 2)

    def test_empty_sequence_rejected(self):
        stack = BiLstmStack(6, 8, 1).double()
        with pytest.raises(ValueError):
            stack(torch.zeros(0, 6, dtype=torch.double))


class TestQuestionUnderstanding:
    def test_single_word_condenses_to_attended_state(self):
        enc = make_question_encoder()
        gen = torch.Generator().manual_seed(0)
        out = enc(rand((1, 8), gen))
        assert torch.allclose(out.condensed, out.attended[0])
        assert torch.allclose(out.attended[0], out.levels[-1][0])

    def test_shapes(self):
        enc = make_question_encoder(wd=8, d_h=64)
        gen = torch.Generator().manual_seed(1)
        out = enc(rand((5, 8), gen))
        assert len(out.levels) == 3
        assert all(level.shape == (5, 64) for level in out.levels)
        assert out.condensed.shape == (64,)

    def test_empty_question_rejected(self):
        enc = make_question_encoder()
        with pytest.raises(ValueError):
            enc(torch.zeros(0, 8, dtype=torch.double))


class TestWordLevelAttention:
    def test_single_question_word(self):
        gen = torch.Generator().manual_seed(2)
        params = AttnParams(6, 4).double()
        context = rand((5, 6), gen)
        question = rand((1, 6), gen)
        out = word_level_attention(context, question, params)
        for i in range(5):
            assert torch.allclose(out[i], question[0])

    def test_matches_bruteforce(self):
        gen = torch.Generator().manual_seed(3)
        params = AttnParams(4, 3).double()
        context, question = rand((3, 4), gen), rand((2, 4), gen)
        out = word_level_attention(context, question, params)
        expected = attention_bruteforce(
            context.numpy(), question.numpy(), question.numpy(),
            params.proj.detach().numpy(), params.diag.detach().numpy(),
        )
        assert torch.allclose(out, torch.as_tensor(expected), atol=1e-10)

    def test_empty_question_rejected(self):
        params = AttnParams(4, 3).double()
        with pytest.raises(ValueError):
            word_level_attention(torch.zeros(2, 4).double(), torch.zeros(0, 4).double(), params)


class TestContextUnderstanding:
    def encode(self, m=4, q=3, wd=8, d_h=8, layers=2, seed=4):
        torch.manual_seed(seed)
        q_enc = QuestionUnderstanding(wd, d_h, 8).double()
        c_enc = ContextUnderstanding(wd, d_h, 8, layers).double()
        gen = torch.Generator().manual_seed(seed)
        question = q_enc(rand((q, wd), gen))
        context = c_enc(rand((m, wd), gen), feats(m), question)
        return context, c_enc

    def test_shapes(self):
        context, enc = self.encode(m=4, q=3, d_h=64)
        assert context.final.shape == (4, 128)
        assert len(context.levels) == 2
        assert len(context.multilevel) == 3
        assert all(m.shape == (4, 64) for m in context.multilevel)

    def test_single_token_self_attention_identity(self):
        context, _ = self.encode(m=1)
        assert torch.allclose(context.self_attended[0], torch.cat(
            [context.word_inputs[0]]
            + [lvl[0] for lvl in context.levels]
            + [m[0] for m in context.multilevel]
        ))

    def test_stage_lengths_preserved(self):
        context, _ = self.encode(m=6)
        assert context.word_attended.shape[0] == 6
        assert context.self_attended.shape[0] == 6
        assert context.final.shape[0] == 6

    def test_empty_context_rejected(self):
        torch.manual_seed(0)
        q_enc = QuestionUnderstanding(8, 8, 8).double()
        c_enc = ContextUnderstanding(8, 8, 8, 1).double()
        gen = torch.Generator().manual_seed(0)
        question = q_enc(rand((2, 8), gen))
        with pytest.raises(ValueError):
            c_enc(torch.zeros(0, 8, dtype=torch.double), feats(0), question)

    def test_depth_limited_to_question_levels(self):
        with pytest.raises(ValueError):
            ContextUnderstanding(8, 8, 8, 4)

    def test_zeroed_attention_params_average_uniformly(self):
        torch.manual_seed(5)
        q_enc = QuestionUnderstanding(8, 8, 8).double()
        c_enc = ContextUnderstanding(8, 8, 8, 1).double()
        with torch.no_grad():
            for module in (c_enc.word_attn, *c_enc.multilevel_attns, c_enc.self_attn):
                module.proj.zero_()
        gen = torch.Generator().manual_seed(5)
        question = q_enc(rand((3, 8), gen))
        context = c_enc(rand((4, 8), gen), feats(4), question)
        # zero scores -> uniform weights -> every attended row is the mean
        expected_word = question.word_inputs.mean(dim=0)
        for i in range(4):
            assert torch.allclose(context.word_attended[i], expected_word)
        for j, m in enumerate(context.multilevel):
            level = question.levels[min(j, 2)]
            for i in range(4):
                assert torch.allclose(m[i], level.mean(dim=0))

    def test_finite_at_random_dims(self):
        gen = torch.Generator().manual_seed(9)
        for trial in range(6):
            wd = int(torch.randint(2, 16, (1,), generator=gen)) * 2
            d_h = int(torch.randint(1, 8, (1,), generator=gen)) * 2
            layers = int(torch.randint(1, 4, (1,), generator=gen))
            m = int(torch.randint(1, 7, (1,), generator=gen))
            q = int(torch.randint(1, 6, (1,), generator=gen))
            torch.manual_seed(trial)
            q_enc = QuestionUnderstanding(wd, d_h, 4).double()
            c_enc = ContextUnderstanding(wd, d_h, 4, layers).double()
            question = q_enc(rand((q, wd), gen))
            context = c_enc(rand((m, wd), gen), feats(m), question)
            assert torch.isfinite(context.final).all()
            assert torch.isfinite(question.condensed).all()


class TestObjectPooling:
    def test_two_objects_of_two_words(self):
        gen = torch.Generator().manual_seed(0)
        states = rand((4, 6), gen)
        pooled = pool_segments(states, [(0, 2), (2, 4)])
        assert pooled.shape == (2, 6)
        assert torch.allclose(pooled[0], states[0:2].mean(dim=0))
        assert torch.allclose(pooled[1], states[2:4].mean(dim=0))

    def test_object_encoding_deterministic(self):
        # the object context is one concatenated word sequence, so encoding
        # the same scene twice gives bit-identical per-object vectors
        from ocrqa.config import RunConfig
        from ocrqa.corpus import Sample
        from ocrqa.embeddings import collect_vocabulary
        from ocrqa.model import OcrQaModel, prepare_sample

        quad = Quad(10, 10, 40, 10, 40, 30, 10, 30)
        obj = SceneObject(name="bus", attributes=("red",), quad=quad)
        sample = Sample(
            sample_id="s",
            image_width=100,
            image_height=100,
            question="what is here",
            gold_answers=("unanswerable",),
            ocr_tokens=(),
            objects=(obj, obj),
        )
        torch.manual_seed(0)
        cfg = RunConfig(word_dim=8, ctx_dim=8, hidden_dim=8, attn_dim=8, answer_dim=8, oov_buckets=4, context_layers=1).validate()
        model = OcrQaModel(cfg, collect_vocabulary([sample]))
        prep = prepare_sample(sample)
        question = model.question_enc(model._word_inputs(prep.question_words, model.table))
        first, _ = model._encode_objects(prep, question, None)
        second, _ = model._encode_objects(prep, question, None)
        assert torch.equal(first, second)
        assert first.shape == (2, 16)

    def test_empty_span_rejected(self):
        with pytest.raises(ValueError):
            pool_segments(torch.zeros(3, 2, dtype=torch.double), [(1, 1)])
