"""
Unit tests for noun-phrase chunking and the phrase-level image set.
"""

import json

import pytest

from phrase_mmt.corpus import RegionAnnotation, SentenceImagePair
from phrase_mmt.errors import CorpusParseError, DomainError, GroundingError
from phrase_mmt.grounding import (
    LexiconChunker,
    PhraseSetBuilder,
    PhraseSetConfig,
    PhraseSpan,
    PrecomputedGrounding,
    RegionSpanChunker,
    build_phrase_image_set,
    chunk_noun_phrases,
    head_of,
    load_phrase_set,
    save_phrase_set,
)
from phrase_mmt.tokenizer import MASK_TOKEN


class TestChunkNounPhrases:
    """Tests for the DET? ADJ* NOUN+ chunker."""

    def test_single_phrase(self):
        """Should chunk a determiner-adjective-noun phrase."""
        assert chunk_noun_phrases(["a", "black", "car"]) == [PhraseSpan(0, 3)]

    def test_two_phrases(self):
        """Should find both phrases of a sentence, left to right."""
        tokens = ["a", "person", "stands", "near", "a", "black", "car"]
        assert chunk_noun_phrases(tokens) == [PhraseSpan(0, 2), PhraseSpan(4, 3)]

    def test_bare_and_compound_nouns(self):
        """Should accept nouns without determiners and runs of nouns."""
        assert chunk_noun_phrases(["dogs", "run"]) == [PhraseSpan(0, 1)]
        assert chunk_noun_phrases(["the", "dog", "boat"]) == [PhraseSpan(0, 3)]

    def test_no_noun(self):
        """Should return nothing when no noun follows."""
        assert chunk_noun_phrases(["a", "black", "runs"]) == []
        assert chunk_noun_phrases([]) == []

    def test_masked_tokens_never_match(self):
        """Should ignore mask tokens."""
        assert chunk_noun_phrases([MASK_TOKEN, MASK_TOKEN, "runs"]) == []

    def test_head_of(self):
        """Should return the final noun and fail without one."""
        assert head_of(["a", "black", "car"]) == "car"
        with pytest.raises(DomainError):
            head_of(["a", "black"])


class TestRegionSpanChunker:
    """Tests for chunking from annotated spans."""

    def test_drops_overlaps(self):
        """Should keep spans in order and skip overlapping ones."""
        regions = (
            RegionAnnotation(0, 3, (0.0,)),
            RegionAnnotation(1, 2, (0.0,)),
            RegionAnnotation(4, 1, (0.0,)),
        )
        pair = SentenceImagePair("x", ("a", "b", "c", "d", "e"), ("y",), regions)
        assert RegionSpanChunker().chunk(pair) == [PhraseSpan(0, 3), PhraseSpan(4, 1)]

    def test_head_falls_back_to_last_token(self):
        """Should use the last token when the lexicon knows no noun."""
        assert RegionSpanChunker().head(["la", "voiture"]) == "voiture"


class TestPhraseSetBuilder:
    """Tests for building the phrase/region store."""

    def test_synthetic_corpus(self, small_corpus):
        """Should ground both entities of every synthetic sentence."""
        result = PhraseSetBuilder().build(small_corpus)
        assert result.stats == {"sentences": 40, "phrases_found": 80, "grounded": 80, "skipped": 0}
        first = result.pairs[0]
        assert first.phrase_tokens == small_corpus[0].source_tokens[:3]
        assert first.region_feature == small_corpus[0].regions[0].feature
        assert first.head_token == small_corpus[0].source_tokens[2]
        assert first.source_id == small_corpus[0].id

    def test_skip_policy(self):
        """Should skip phrases without a matching region."""
        pair = SentenceImagePair("x", ("a", "dog", "runs"), ("ein", "hund", "rennt"))
        result = PhraseSetBuilder().build([pair])
        assert result.pairs == []
        assert result.stats["skipped"] == 1

    def test_fail_policy(self):
        """Should raise GroundingError under the fail policy."""
        pair = SentenceImagePair("x", ("a", "dog", "runs"), ("ein", "hund", "rennt"))
        with pytest.raises(GroundingError):
            PhraseSetBuilder(config=PhraseSetConfig(policy="fail")).build([pair])

    def test_precomputed_grounding(self, tmp_path):
        """Should resolve spans through a precomputed table."""
        path = tmp_path / "groundings.jsonl"
        path.write_text(json.dumps({"source_id": "x", "start": 0, "len": 2, "feat": [0.5, 1.5]}) + "\n", encoding="utf-8")
        pair = SentenceImagePair("x", ("a", "dog", "runs"), ("ein", "hund", "rennt"))
        pairs = build_phrase_image_set([pair], LexiconChunker(), PrecomputedGrounding.from_jsonl(path))
        assert pairs[0].region_feature == (0.5, 1.5)

    def test_save_load(self, tmp_path, small_phrase_set):
        """Should restore the phrase set from JSONL."""
        path = tmp_path / "pset.jsonl"
        save_phrase_set(small_phrase_set, path)
        assert load_phrase_set(path) == small_phrase_set

    def test_load_malformed(self, tmp_path):
        """Should report the line of a malformed phrase pair."""
        path = tmp_path / "pset.jsonl"
        path.write_text('{"phrase": ["a", "dog"]}\n', encoding="utf-8")
        with pytest.raises(CorpusParseError) as excinfo:
            load_phrase_set(path)
        assert excinfo.value.line_number == 1


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
