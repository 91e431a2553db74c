"""
Pipeline stages shared by the CLI and the experiments.

Handles:
- Loading or generating the corpus and splitting it
- Building the retrieval stack (phrase set, CVAE, encoder, index)
- Turning sentence pairs into translation examples with retrieved phrase reps
- Training, translating and scoring
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import ExperimentConfig, Settings
from .corpus import CorpusSplit, SentenceImagePair, gen_synthetic, load_corpus, mask_visual_tokens, split_corpus
from .evaluation import BleuReport, bleu
from .grounding import (
    GroundingProvider,
    LexiconChunker,
    PhraseChunker,
    PhraseRegionPair,
    PhraseSetBuilder,
    PhraseSetConfig,
    PrecomputedGrounding,
    RegionSpanChunker,
    SpanMatchGrounding,
    extract_phrases,
)
from .latent_model import LatentModel, train_cvae
from .retrieval import (
    PhraseRetriever,
    PrecomputedPhraseEncoder,
    RetrievalIndex,
    StaticPhraseEncoder,
    TokenTableEncoder,
    build_index,
)
from .tokenizer import Vocab, build_vocab, detokenize
from .translator import (
    FusionInput,
    TranslationExample,
    TranslationModel,
    TranslatorConfig,
    TranslatorTrainResult,
    beam_search,
    train_translator,
)

logger = logging.getLogger(__name__)


@dataclass
class RetrievalStack:
    """Everything the retrieval function needs, built from one training corpus."""
    vocab: Vocab
    phrase_set: list[PhraseRegionPair]
    latent_model: LatentModel
    encoder: TokenTableEncoder
    index: RetrievalIndex
    cvae_log: list[dict] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def retriever(self, k: int, rep_kind: str = "guided", exclude_same_source: bool = False) -> PhraseRetriever:
        return PhraseRetriever(self.index, self.encoder, k, rep_kind, exclude_same_source)


def load_experiment_corpus(settings: Settings) -> CorpusSplit:
    """External corpus when configured, synthetic world otherwise; then split."""
    exp = settings.experiment
    if exp.corpus_path:
        corpus = load_corpus(exp.corpus_path)
    else:
        corpus = gen_synthetic(settings.synth)
    return split_corpus(corpus, exp.valid_fraction, exp.test_fraction, exp.split_seed)


def make_chunker(exp: ExperimentConfig) -> PhraseChunker:
    """Annotated region spans for external corpora, the lexicon chunker for synthetic data."""
    return RegionSpanChunker() if exp.corpus_path else LexiconChunker()


def make_grounding(exp: ExperimentConfig) -> GroundingProvider:
    if exp.grounding_path:
        return PrecomputedGrounding.from_jsonl(exp.grounding_path)
    return SpanMatchGrounding()


def make_encoder(vocab: Vocab, exp: ExperimentConfig) -> TokenTableEncoder:
    if exp.encoder_path:
        return PrecomputedPhraseEncoder.from_jsonl(exp.encoder_path)
    return StaticPhraseEncoder(vocab, exp.encoder_dim, exp.encoder_seed)


def build_vocabulary(corpus: Sequence[SentenceImagePair]) -> Vocab:
    """Joint source/target vocabulary (the translator ties its embeddings)."""
    sentences = [pair.source_tokens for pair in corpus] + [pair.target_tokens for pair in corpus]
    return build_vocab(sentences)


def build_retrieval_stack(
    train: Sequence[SentenceImagePair],
    settings: Settings,
    vocab: Optional[Vocab] = None,
) -> RetrievalStack:
    """
    Phrase set -> CVAE -> index over the training corpus.

    Args:
        train: Training sentence-image pairs
        settings: Run settings (latent, cvae and experiment sections are used)
        vocab: Vocabulary to use; built from `train` when omitted
    """
    exp = settings.experiment
    vocab = vocab or build_vocabulary(train)
    builder = PhraseSetBuilder(make_chunker(exp), make_grounding(exp), PhraseSetConfig(exp.grounding_policy))
    phrase_result = builder.build(train)

    latent = settings.latent
    if phrase_result.pairs and len(phrase_result.pairs[0].region_feature) != latent.feature_dim:
        latent = dataclasses.replace(latent, feature_dim=len(phrase_result.pairs[0].region_feature))
        logger.info(f"Using feature_dim {latent.feature_dim} from the phrase set")
    cvae = train_cvae(phrase_result.pairs, vocab, latent, settings.cvae)
    encoder = make_encoder(vocab, exp)
    index = build_index(phrase_result.pairs, encoder, cvae.model, vocab, exp.rep_mode)

    return RetrievalStack(
        vocab=vocab,
        phrase_set=phrase_result.pairs,
        latent_model=cvae.model,
        encoder=encoder,
        index=index,
        cvae_log=cvae.log,
        stats={"phrase_set": phrase_result.stats, "cvae": cvae.stats},
    )


def build_examples(
    corpus: Sequence[SentenceImagePair],
    vocab: Vocab,
    retriever: Optional[PhraseRetriever] = None,
    chunker: Optional[PhraseChunker] = None,
    mask_source: bool = False,
) -> list[TranslationExample]:
    """
    Encode sentence pairs for the translator.

    Phrases are chunked from the unmasked source and each one is replaced by
    its retrieved universal representation. With mask_source the encoder
    sees the masked tokens at the same positions. Without a retriever the
    examples carry no phrases (text-only).
    """
    chunker = chunker or LexiconChunker()
    examples = []
    for pair in corpus:
        fusion = FusionInput()
        if retriever is not None:
            phrases = extract_phrases(pair, chunker)
            if phrases:
                spans = [span for span, _ in phrases]
                reps = np.stack([retriever(tokens, pair.id) for _, tokens in phrases])
                fusion = FusionInput(spans=spans, reps=reps)
        source = mask_visual_tokens(pair) if mask_source else pair
        examples.append(TranslationExample(
            source_ids=vocab.encode(source.source_tokens),
            target_ids=vocab.encode(pair.target_tokens),
            fusion=fusion,
            source_id=pair.id,
        ))
    return examples


def train_translation_system(
    examples: Sequence[TranslationExample],
    vocab: Vocab,
    rep_dim: int,
    cfg: TranslatorConfig,
    use_fusion: bool = True,
) -> TranslatorTrainResult:
    return train_translator(examples, len(vocab), rep_dim, cfg, use_fusion)


def translate_examples(
    model: TranslationModel,
    examples: Sequence[TranslationExample],
    vocab: Vocab,
    beam: int = 4,
) -> list[str]:
    """Beam-search every example and detokenize the output."""
    outputs = []
    truncated = 0
    for example in examples:
        hypothesis = beam_search(model, example, beam)
        truncated += hypothesis.truncated
        outputs.append(detokenize(vocab.decode(hypothesis.tokens)))
    if truncated:
        logger.warning(f"{truncated}/{len(examples)} translations hit the length limit")
    return outputs


def references(corpus: Sequence[SentenceImagePair]) -> list[str]:
    return [detokenize(pair.target_tokens) for pair in corpus]


def score_translations(hypotheses: Sequence[str], refs: Sequence[str], exp: ExperimentConfig) -> BleuReport:
    return bleu(hypotheses, refs, exp.bootstrap_resamples, exp.bootstrap_seed)
