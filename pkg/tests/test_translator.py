"""
Unit tests for the translator: multimodal aggregation, training, decoding
and checkpoints.
"""

import itertools
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from phrase_mmt.errors import ConfigError, DomainError, ShapeError, TrainingError
from phrase_mmt.grounding import PhraseSpan
from phrase_mmt.neural_core import AdamOptimizer, grad_check, save_checkpoint
from phrase_mmt.tokenizer import BOS_ID, EOS_ID, PAD_ID, Vocab
from phrase_mmt.translator import (
    BANNED_OUTPUT_IDS,
    FusionInput,
    MultimodalAggregation,
    TranslationExample,
    TranslationModel,
    TranslatorConfig,
    average_checkpoints,
    average_state_dicts,
    beam_search,
    collate_translation,
    greedy_decode,
    inverse_sqrt_lr,
    load_translation_model,
    save_translation_model,
    train_step,
    train_translator,
    translation_loss,
)

TINY_CONFIG = TranslatorConfig(
    d_model=8,
    ffn_dim=16,
    encoder_layers=1,
    decoder_layers=1,
    heads=2,
    dropout=0.0,
    label_smoothing=0.1,
    warmup_steps=4,
    peak_lr=1e-2,
    epochs=2,
    batch_size=2,
    average_last=2,
    max_positions=32,
    seed=0,
)


def tiny_examples(rep_dim: int = 6) -> list[TranslationExample]:
    rng = np.random.default_rng(0)
    return [
        TranslationExample(
            source_ids=[5, 6, 7, 8],
            target_ids=[9, 7, 5],
            fusion=FusionInput([PhraseSpan(0, 2), PhraseSpan(3, 1)], rng.normal(size=(2, rep_dim))),
            source_id="s0",
        ),
        TranslationExample(
            source_ids=[8, 7, 6, 5],
            target_ids=[6, 6, 9],
            fusion=FusionInput([PhraseSpan(1, 3)], rng.normal(size=(1, rep_dim))),
            source_id="s1",
        ),
    ]


def aggregation_module(d: int = 4) -> MultimodalAggregation:
    torch.manual_seed(0)
    module = MultimodalAggregation(d, heads=1, dropout=0.0).double()
    with torch.no_grad():
        for linear in (module.fusion_attn.q_proj, module.fusion_attn.k_proj,
                       module.fusion_attn.v_proj, module.fusion_attn.out_proj):
            linear.weight.copy_(torch.eye(d, dtype=torch.float64))
            linear.bias.zero_()
    module.eval()
    return module


def layer_norm(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    mean = x.mean()
    var = ((x - mean) ** 2).mean()
    return (x - mean) / torch.sqrt(var + eps)


class TestConfig:
    """Tests for translator configuration."""

    def test_heads_must_divide(self):
        """Should reject d_model not divisible by the head count."""
        with pytest.raises(ConfigError):
            TranslatorConfig(d_model=10, heads=4).validate()

    def test_inverse_sqrt_lr(self):
        """Should warm up linearly and decay with the inverse square root."""
        assert inverse_sqrt_lr(2, 4, 1.0) == pytest.approx(0.5)
        assert inverse_sqrt_lr(4, 4, 1.0) == pytest.approx(1.0)
        assert inverse_sqrt_lr(16, 4, 1.0) == pytest.approx(0.5)
        with pytest.raises(ConfigError):
            inverse_sqrt_lr(0, 4, 1.0)


class TestFusionInput:
    """Tests for per-sentence fusion inputs."""

    def test_count_mismatch(self):
        """Should require one representation per span."""
        with pytest.raises(ShapeError):
            FusionInput([PhraseSpan(0, 1)], np.zeros((2, 3)))

    def test_overlapping_spans(self):
        """Should reject overlapping spans."""
        with pytest.raises(DomainError):
            FusionInput([PhraseSpan(0, 2), PhraseSpan(1, 2)], np.zeros((2, 3)))

    def test_collate_layout(self):
        """Should pad sources, shift targets and mark spans."""
        batch = collate_translation(tiny_examples(), 6)
        assert batch.decoder_inputs[0].tolist() == [BOS_ID, 9, 7, 5]
        assert batch.decoder_targets[1].tolist() == [6, 6, 9, EOS_ID]
        assert batch.phrase_mask.tolist() == [[True, True], [True, False]]
        assert batch.span_mask[0, 0].tolist() == [1.0, 1.0, 0.0, 0.0]
        assert batch.span_mask[1, 0].tolist() == [0.0, 1.0, 1.0, 1.0]

    def test_span_outside_source(self):
        """Should reject spans past the end of the source."""
        example = TranslationExample([5, 6], [7], FusionInput([PhraseSpan(1, 2)], np.zeros((1, 3))))
        with pytest.raises(ShapeError):
            collate_translation([example], 3)


class TestMultimodalAggregation:
    """Tests for gated phrase aggregation and fusion."""

    def test_phrase_aggregate_hand_oracle(self):
        """Should gate span states by sigmoid(W1 u + W2 h) and normalize u plus their sum."""
        module = aggregation_module()
        generator = torch.Generator().manual_seed(1)
        u = torch.randn(1, 2, 4, generator=generator, dtype=torch.float64)
        states = torch.randn(1, 5, 4, generator=generator, dtype=torch.float64)
        spans = [PhraseSpan(0, 2), PhraseSpan(3, 2)]
        span_mask = torch.zeros(1, 2, 5, dtype=torch.float64)
        for i, span in enumerate(spans):
            span_mask[0, i, span.start:span.end] = 1.0

        w1 = module.token_gate_rep.weight.detach()
        w2 = module.token_gate_state.weight.detach()
        expected = []
        for i, span in enumerate(spans):
            total = u[0, i].clone()
            for j in range(span.start, span.end):
                gate = torch.sigmoid(w1 @ u[0, i] + w2 @ states[0, j])
                total = total + gate * states[0, j]
            expected.append(layer_norm(total))

        got = module.phrase_aggregate(u, states, span_mask)[0]
        assert torch.allclose(got, torch.stack(expected), atol=1e-10)
        single = module.aggregate_span(u[0, 1], states[0], spans[1])
        assert torch.allclose(single, expected[1], atol=1e-10)

    def test_aggregate_span_bounds(self):
        """Should reject spans outside the states."""
        module = aggregation_module()
        with pytest.raises(ShapeError):
            module.aggregate_span(torch.zeros(4, dtype=torch.float64), torch.zeros(3, 4, dtype=torch.float64), PhraseSpan(2, 2))

    def test_fuse_hand_oracle(self):
        """Should add the sentence-gated attention over phrases to every state."""
        module = aggregation_module()
        generator = torch.Generator().manual_seed(2)
        states = torch.randn(1, 3, 4, generator=generator, dtype=torch.float64)
        phrases = torch.randn(1, 2, 4, generator=generator, dtype=torch.float64)
        phrase_mask = torch.tensor([[True, True]])

        w3 = module.sentence_gate_state.weight.detach()
        w4 = module.sentence_gate_fused.weight.detach()
        expected = []
        for j in range(3):
            weights = torch.softmax(phrases[0] @ states[0, j] / math.sqrt(4), dim=0)
            attended = weights @ phrases[0]
            gate = torch.sigmoid(w3 @ states[0, j] + w4 @ attended)
            expected.append(states[0, j] + gate * attended)

        parts = module.fuse_parts(states, phrases, phrase_mask)
        assert torch.allclose(parts.fused[0], torch.stack(expected), atol=1e-10)
        assert torch.all((parts.gate > 0) & (parts.gate < 1))

    def test_rows_without_phrases_unchanged(self):
        """Should return H exactly for sentences with no phrase."""
        module = aggregation_module()
        states = torch.randn(2, 3, 4, dtype=torch.float64)
        phrases = torch.randn(2, 1, 4, dtype=torch.float64)
        fused = module.fuse(states, phrases, torch.tensor([[True], [False]]))
        assert torch.equal(fused[1], states[1])
        assert not torch.equal(fused[0], states[0])

    def test_masked_phrase_ignored(self):
        """Should give the same result whether or not a padded phrase slot is present."""
        module = aggregation_module()
        states = torch.randn(1, 3, 4, dtype=torch.float64)
        phrase = torch.randn(1, 1, 4, dtype=torch.float64)
        padded = torch.cat([phrase, torch.randn(1, 1, 4, dtype=torch.float64)], dim=1)
        alone = module.fuse(states, phrase, torch.tensor([[True]]))
        with_pad = module.fuse(states, padded, torch.tensor([[True, False]]))
        assert torch.allclose(alone, with_pad, atol=1e-12)


class TestTranslationModel:
    """Tests for the full model."""

    def test_text_only_bit_exact(self):
        """Should reproduce the text-only model exactly with no phrases or with the gate off."""
        fusion = TranslationModel(TINY_CONFIG, 12, 6, use_fusion=True).eval()
        text_only = TranslationModel(TINY_CONFIG, 12, 6, use_fusion=False).eval()

        no_phrases = [TranslationExample([5, 6, 7], [8, 9], FusionInput(), "x")]
        assert torch.equal(fusion(collate_translation(no_phrases, 6)), text_only(collate_translation(no_phrases, 6)))

        batch = collate_translation(tiny_examples(), 6)
        assert not torch.equal(fusion(batch), text_only(batch))
        fusion.aggregation.lambda_off = True
        assert torch.equal(fusion(batch), text_only(batch))

    def test_text_only_bit_exact_random_sentences(self):
        """Should match the text-only logits on 50 random sentences with the gate off."""
        fusion = TranslationModel(TINY_CONFIG, 12, 6, use_fusion=True).eval()
        text_only = TranslationModel(TINY_CONFIG, 12, 6, use_fusion=False).eval()
        fusion.aggregation.lambda_off = True

        rng = np.random.default_rng(3)
        examples = []
        for i in range(50):
            n = int(rng.integers(3, 9))
            starts = sorted(rng.choice(n, size=int(rng.integers(0, 3)), replace=False).tolist())
            spans = [PhraseSpan(s, 1) for s in starts]
            examples.append(TranslationExample(
                source_ids=rng.integers(5, 12, size=n).tolist(),
                target_ids=rng.integers(5, 12, size=int(rng.integers(2, 7))).tolist(),
                fusion=FusionInput(spans, rng.normal(size=(len(spans), 6))),
                source_id=f"r{i}",
            ))
        batch = collate_translation(examples, 6)
        assert torch.equal(fusion(batch), text_only(batch))

    def test_gradient_check(self):
        """Should match finite differences on every parameter in double precision."""
        model = TranslationModel(TINY_CONFIG, 12, 6, use_fusion=True).double()
        batch = collate_translation(tiny_examples(), 6, torch.float64)
        error = grad_check(lambda: translation_loss(model, batch, 0.1), dict(model.named_parameters()))
        assert error < 1e-5

    def test_max_positions(self):
        """Should reject sources longer than the position table."""
        model = TranslationModel(TINY_CONFIG, 12, 6).eval()
        example = TranslationExample(list(range(5, 12)) * 5, [5], FusionInput())
        with pytest.raises(ShapeError):
            model(collate_translation([example], 6))


class TestAverageStateDicts:
    """Tests for checkpoint averaging."""

    def test_mean(self):
        """Should average entries elementwise."""
        averaged = average_state_dicts([{"w": torch.tensor([1.0, 2.0])}, {"w": torch.tensor([3.0, 6.0])}])
        assert torch.allclose(averaged["w"], torch.tensor([2.0, 4.0]))

    def test_shape_mismatch_names_parameter(self):
        """Should raise ShapeError naming the offending parameter."""
        with pytest.raises(ShapeError, match="decoder.weight"):
            average_state_dicts([{"decoder.weight": torch.zeros(2)}, {"decoder.weight": torch.zeros(3)}])
        with pytest.raises(ShapeError, match="bias"):
            average_state_dicts([{"w": torch.zeros(2), "bias": torch.zeros(1)}, {"w": torch.zeros(2)}])


class TestDecoding:
    """Tests for greedy and beam search."""

    def _exhaustive_best(self, model, example, allowed, max_len):
        """Best mean log-probability over every EOS-terminated sequence of at most max_len tokens."""
        batch = collate_translation([example], model.rep_dim, torch.float64)
        memory = model.fuse_batch(model.encode_source(batch.source, batch.source_pad), batch)
        best = None
        for length in range(max_len):
            for body in itertools.product(allowed, repeat=length):
                sequence = list(body) + [EOS_ID]
                inputs = torch.tensor([[BOS_ID] + sequence[:-1]])
                logits = model.decode(memory, batch.source_pad, inputs)[0]
                log_probs = F.log_softmax(logits.to(torch.float64), dim=-1)
                score = sum(float(log_probs[t, token]) for t, token in enumerate(sequence)) / len(sequence)
                if best is None or score > best[0]:
                    best = (score, list(body))
        return best

    def test_beam_matches_exhaustive_search(self):
        """Should find the best normalized hypothesis when the beam covers every expansion."""
        vocab = Vocab(["x", "y"])
        allowed = [i for i in range(len(vocab)) if i not in BANNED_OUTPUT_IDS and i != EOS_ID]
        for seed in range(3):
            cfg = TranslatorConfig(**{**TINY_CONFIG.__dict__, "seed": seed})
            model = TranslationModel(cfg, len(vocab), 6, use_fusion=True).double().eval()
            example = TranslationExample([5, 6, 5], [6], FusionInput([PhraseSpan(0, 2)], np.ones((1, 6))))
            with torch.no_grad():
                score, tokens = self._exhaustive_best(model, example, allowed, 3)
                hypothesis = beam_search(model, example, beam=16, max_len=3)
            assert not hypothesis.truncated
            assert hypothesis.tokens == tokens
            assert hypothesis.score == pytest.approx(score, abs=1e-9)

    def test_beam_one_is_greedy(self):
        """Should follow the greedy path with a beam of one."""
        model = TranslationModel(TINY_CONFIG, 12, 6).eval()
        for example in tiny_examples():
            assert beam_search(model, example, beam=1).tokens == greedy_decode(model, example).tokens

    def test_beam_score_not_below_greedy(self):
        """Should score at least as high as greedy, finished against finished and truncated against truncated."""
        for seed in range(5):
            cfg = TranslatorConfig(**{**TINY_CONFIG.__dict__, "seed": seed})
            model = TranslationModel(cfg, 12, 6).eval()
            for example in tiny_examples():
                for max_len in (1, 2, 6):
                    greedy = greedy_decode(model, example, max_len)
                    hypothesis = beam_search(model, example, beam=3, max_len=max_len)
                    if not greedy.truncated:
                        assert not hypothesis.truncated
                        assert hypothesis.score >= greedy.score - 1e-9
                    if hypothesis.truncated:
                        assert greedy.truncated
                        assert hypothesis.score >= greedy.score - 1e-9

    def test_never_emits_banned_tokens(self):
        """Should never produce padding, BOS, UNK or MASK."""
        model = TranslationModel(TINY_CONFIG, 12, 6).eval()
        for example in tiny_examples():
            hypothesis = beam_search(model, example, beam=3)
            assert not set(hypothesis.tokens) & set(BANNED_OUTPUT_IDS)

    def test_invalid_beam(self):
        """Should reject beam < 1."""
        model = TranslationModel(TINY_CONFIG, 12, 6).eval()
        with pytest.raises(ConfigError):
            beam_search(model, tiny_examples()[0], beam=0)


class TestTraining:
    """Tests for the training loop and checkpoints."""

    def test_deterministic(self):
        """Should give identical weights and logs for the same seed."""
        a = train_translator(tiny_examples(), 12, 6, TINY_CONFIG)
        b = train_translator(tiny_examples(), 12, 6, TINY_CONFIG)
        for name, value in a.model.state_dict().items():
            assert torch.equal(value, b.model.state_dict()[name])
        assert a.log == b.log
        assert a.stats == {"sentences": 2, "steps": 2, "averaged": 2, "use_fusion": True}

    def test_train_step_reduces_loss(self):
        """Should lower the loss on a fixed batch over repeated steps."""
        torch.manual_seed(0)
        model = TranslationModel(TINY_CONFIG, 12, 6).train()
        optimizer = AdamOptimizer(model.named_parameters(), lr=TINY_CONFIG.peak_lr)
        batch = collate_translation(tiny_examples(), 6)
        losses = [train_step(model, batch, optimizer, step, TINY_CONFIG) for step in range(1, 31)]
        assert losses[-1] < losses[0]

    def test_train_step_non_finite(self):
        """Should raise TrainingError carrying the step on a NaN loss."""
        model = TranslationModel(TINY_CONFIG, 12, 6).train()
        with torch.no_grad():
            model.aggregation.token_gate_rep.weight.fill_(float("nan"))
        optimizer = AdamOptimizer(model.named_parameters(), lr=TINY_CONFIG.peak_lr)
        with pytest.raises(TrainingError) as excinfo:
            train_step(model, collate_translation(tiny_examples(), 6), optimizer, 7, TINY_CONFIG)
        assert excinfo.value.step == 7

    def test_empty(self):
        """Should refuse an empty corpus."""
        with pytest.raises(DomainError):
            train_translator([], 12, 6, TINY_CONFIG)

    def test_save_load_and_average(self, tmp_path):
        """Should restore an identical model and average checkpoints."""
        vocab = Vocab([f"w{i}" for i in range(7)])
        model = train_translator(tiny_examples(), len(vocab), 6, TINY_CONFIG).model
        path = save_translation_model(model, vocab, tmp_path / "nmt.npz", {"k": 5})
        loaded, loaded_vocab, metadata = load_translation_model(path)
        assert loaded_vocab == vocab
        assert metadata["k"] == 5 and metadata["use_fusion"] is True
        batch = collate_translation(tiny_examples(), 6)
        assert torch.equal(loaded(batch), model(batch))

        averaged, _, _ = average_checkpoints([path, path])
        for name, value in averaged.state_dict().items():
            assert torch.allclose(value, model.state_dict()[name])

    def test_load_wrong_kind(self, tmp_path):
        """Should refuse archives of another kind."""
        path = save_checkpoint(tmp_path / "x.npz", {"w": np.zeros(1)}, {"kind": "latent_model"})
        with pytest.raises(ConfigError):
            load_translation_model(path)

    @pytest.mark.slow
    def test_overfits_small_corpus(self, small_corpus, small_vocab):
        """Should memorize a handful of sentence pairs."""
        examples = [
            TranslationExample(
                small_vocab.encode(pair.source_tokens),
                small_vocab.encode(pair.target_tokens),
                FusionInput(),
                pair.id,
            )
            for pair in small_corpus[:8]
        ]
        cfg = TranslatorConfig.desk_scale(
            d_model=32, ffn_dim=64, dropout=0.0, label_smoothing=0.0, warmup_steps=10,
            peak_lr=3e-3, epochs=200, batch_size=8, average_last=1,
        )
        model = train_translator(examples, len(small_vocab), 1, cfg, use_fusion=False).model
        for example in examples:
            assert greedy_decode(model, example).tokens == example.target_ids


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
