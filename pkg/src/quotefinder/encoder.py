"""Subword vocabulary, packed sequence-pair inputs, and the encoder.

A packed input lays out one (query, paragraph) pair as

    [CLS] title [body_start] context [SEP] paragraph [SEP]

with the title keeping its first pieces, the context its last pieces (the
words nearest the quote survive truncation), and the paragraph its first
pieces. The encoder is a pre-norm transformer trained from scratch; its
pooled output is the final hidden vector at the [CLS] position.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import torch
from torch import nn

from .corpus import Corpus, QuoteQuery, SourceParagraph
from .errors import QuoteFinderError, ValidationError

PAD, UNK, CLS, SEP, BODY_START = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[body_start]"
SPECIALS = (PAD, UNK, CLS, SEP, BODY_START)

DEFAULT_CAPS = (20, 100, 200)
# [CLS], [body_start], and two [SEP]s ride along with the capped segments.
MAX_PACKED_LEN = sum(DEFAULT_CAPS) + 4


class Caps(NamedTuple):
    title: int
    context: int
    paragraph: int


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


class SubwordVocab:
    """Greedy longest-match subword vocabulary (words lowercased first)."""

    def __init__(self, pieces: Sequence[str]):
        for special in SPECIALS:
            if special not in pieces:
                raise ValidationError(f"vocabulary is missing special token {special}")
        self.pieces = list(pieces)
        if len(set(self.pieces)) != len(self.pieces):
            raise ValidationError("vocabulary contains duplicate pieces")
        self.piece_to_id = {p: i for i, p in enumerate(self.pieces)}
        self.pad_id = self.piece_to_id[PAD]
        self.unk_id = self.piece_to_id[UNK]
        self.cls_id = self.piece_to_id[CLS]
        self.sep_id = self.piece_to_id[SEP]
        self.body_start_id = self.piece_to_id[BODY_START]
        self._max_piece_len = max(len(p) for p in self.pieces)

    def __len__(self) -> int:
        return len(self.pieces)

    def tokenize_word(self, word: str) -> list[str]:
        """Split one word token into pieces; unmatchable words become [UNK]."""
        word = word.lower()
        if not word:
            return [UNK]
        pieces: list[str] = []
        pos = 0
        while pos < len(word):
            end = min(len(word), pos + self._max_piece_len)
            found = None
            while end > pos:
                candidate = word[pos:end]
                if pos > 0:
                    candidate = "##" + candidate
                if candidate in self.piece_to_id:
                    found = candidate
                    break
                end -= 1
            if found is None:
                return [UNK]
            pieces.append(found)
            pos = end if pos > 0 else len(found)
        return pieces

    def encode_word(self, word: str) -> list[int]:
        return [self.piece_to_id[p] for p in self.tokenize_word(word)]

    def content_hash(self) -> str:
        digest = hashlib.sha256("\n".join(self.pieces).encode("utf-8")).hexdigest()
        return digest

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.pieces) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SubwordVocab":
        pieces = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([p for p in pieces if p])


def iter_corpus_tokens(corpus: Corpus) -> Iterator[str]:
    for doc in corpus.sources.values():
        for paragraph in doc.paragraphs:
            yield from paragraph.tokens
    for article in corpus.articles.values():
        yield from article.title
        for sentence in article.sentences:
            yield from sentence


def build_vocab(tokens: Iterable[str] | Corpus, vocab_size: int) -> SubwordVocab:
    """Frequency-ranked vocabulary: specials, characters, then whole words.

    Character pieces (word-initial and ``##`` continuation) guarantee that
    any word over the observed alphabet tokenizes without [UNK]; frequent
    whole words fill the remaining budget. Ties are broken lexicographically
    so equal inputs produce byte-identical vocabulary files.
    """
    floor = len(SPECIALS) + 26
    if vocab_size < floor:
        raise ValidationError(f"vocab_size {vocab_size} below minimum {floor}")
    if isinstance(tokens, Corpus):
        tokens = iter_corpus_tokens(tokens)

    word_counts: Counter[str] = Counter()
    char_counts: Counter[str] = Counter()
    for token in tokens:
        word = token.lower()
        if not word:
            continue
        word_counts[word] += 1
        char_counts.update(word)
    if not word_counts:
        raise ValidationError("cannot build a vocabulary from an empty corpus")

    pieces: list[str] = list(SPECIALS)
    seen = set(pieces)

    def add(piece: str) -> bool:
        if len(pieces) >= vocab_size:
            return False
        if piece not in seen:
            pieces.append(piece)
            seen.add(piece)
        return True

    for char, _ in sorted(char_counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if not (add(char) and add("##" + char)):
            break
    for word, _ in sorted(word_counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if len(pieces) >= vocab_size:
            break
        add(word)
    return SubwordVocab(pieces)


# ---------------------------------------------------------------------------
# Packed inputs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PackedInput:
    """One [CLS] title [body_start] context [SEP] paragraph [SEP] sequence."""

    ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    paragraph_piece_range: tuple[int, int]
    piece_to_token: tuple[int, ...]  # aligned with paragraph_piece_range

    def __len__(self) -> int:
        return len(self.ids)


def _pieces(vocab: SubwordVocab, tokens: Sequence[str]) -> list[int]:
    out: list[int] = []
    for token in tokens:
        out.extend(vocab.encode_word(token))
    return out


def pack_input(
    query: QuoteQuery,
    paragraph: SourceParagraph,
    vocab: SubwordVocab,
    caps: Caps | tuple[int, int, int] = DEFAULT_CAPS,
) -> PackedInput:
    caps = Caps(*caps)
    if caps.paragraph < 1:
        raise ValidationError("paragraph cap must be at least 1")

    title = _pieces(vocab, query.title)[: caps.title]
    context = _pieces(vocab, query.left_context)
    if len(context) > caps.context:
        context = context[len(context) - caps.context :]  # keep the rightmost pieces

    para_ids: list[int] = []
    para_tokens: list[int] = []
    for token_index, token in enumerate(paragraph.tokens):
        for piece_id in vocab.encode_word(token):
            para_ids.append(piece_id)
            para_tokens.append(token_index)
    para_ids = para_ids[: caps.paragraph]
    para_tokens = para_tokens[: caps.paragraph]

    ids = [vocab.cls_id, *title, vocab.body_start_id, *context, vocab.sep_id]
    query_len = len(ids)
    ids.extend(para_ids)
    ids.append(vocab.sep_id)

    segment_ids = [0] * query_len + [1] * (len(para_ids) + 1)
    first = query_len
    last = query_len + len(para_ids) - 1
    return PackedInput(
        ids=tuple(ids),
        segment_ids=tuple(segment_ids),
        attention_mask=(1,) * len(ids),
        paragraph_piece_range=(first, last),
        piece_to_token=tuple(para_tokens),
    )


def map_span(piece_span: tuple[int, int], packed: PackedInput) -> tuple[int, int]:
    """Map a paragraph piece span (positions in the packed sequence) to the
    original token span."""
    first, last = packed.paragraph_piece_range
    i, j = piece_span
    if not (first <= i <= last and first <= j <= last):
        raise ValidationError(
            f"piece span ({i}, {j}) outside paragraph range ({first}, {last})"
        )
    return packed.piece_to_token[i - first], packed.piece_to_token[j - first]


def token_span_to_pieces(token_span: tuple[int, int], packed: PackedInput) -> tuple[int, int]:
    """Inverse of map_span: the covering piece span of a token span."""
    first, _ = packed.paragraph_piece_range
    start_tok, end_tok = token_span
    positions_start = [k for k, t in enumerate(packed.piece_to_token) if t == start_tok]
    positions_end = [k for k, t in enumerate(packed.piece_to_token) if t == end_tok]
    if not positions_start or not positions_end:
        raise ValidationError(
            f"token span ({start_tok}, {end_tok}) not present in packed paragraph "
            "(possibly truncated by the paragraph cap)"
        )
    return first + positions_start[0], first + positions_end[-1]


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ff_size: int = 256
    max_len: int = MAX_PACKED_LEN
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.hidden_size % self.num_heads != 0:
            raise ValidationError("hidden_size must be divisible by num_heads")
        if self.max_len < MAX_PACKED_LEN:
            raise ValidationError(f"max_len must be at least {MAX_PACKED_LEN}")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "hidden_size": self.hidden_size,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "ff_size": self.ff_size,
            "max_len": self.max_len,
            "dropout": self.dropout,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        return cls(**data)


@dataclass
class EncoderOutput:
    pooled: torch.Tensor        # [hidden]
    token_vectors: torch.Tensor  # [length, hidden]


class _SelfAttention(nn.Module):
    def __init__(self, hidden: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = hidden // heads
        self.query = nn.Linear(hidden, hidden)
        self.key = nn.Linear(hidden, hidden)
        self.value = nn.Linear(hidden, hidden)
        self.out = nn.Linear(hidden, hidden)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, key_bias: torch.Tensor) -> torch.Tensor:
        batch, length, hidden = x.shape
        shape = (batch, length, self.heads, self.head_dim)
        q = self.query(x).view(shape).transpose(1, 2)
        k = self.key(x).view(shape).transpose(1, 2)
        v = self.value(x).view(shape).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores + key_bias  # [batch, 1, 1, length], -1e9 on padding
        attn = self.drop(torch.softmax(scores, dim=-1))
        context = (attn @ v).transpose(1, 2).reshape(batch, length, hidden)
        return self.out(context)


class _Block(nn.Module):
    def __init__(self, hidden: int, heads: int, ff: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(hidden)
        self.attn = _SelfAttention(hidden, heads, dropout)
        self.norm2 = nn.LayerNorm(hidden)
        self.ff = nn.Sequential(nn.Linear(hidden, ff), nn.GELU(), nn.Linear(ff, hidden))
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, key_bias: torch.Tensor) -> torch.Tensor:
        x = x + self.drop(self.attn(self.norm1(x), key_bias))
        x = x + self.drop(self.ff(self.norm2(x)))
        return x


class TransformerEncoder(nn.Module):
    """Pre-norm transformer over packed inputs; pooled output = [CLS] vector."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.token_emb = nn.Embedding(config.vocab_size, config.hidden_size)
        self.position_emb = nn.Embedding(config.max_len, config.hidden_size)
        self.segment_emb = nn.Embedding(2, config.hidden_size)
        self.emb_drop = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList(
            _Block(config.hidden_size, config.num_heads, config.ff_size, config.dropout)
            for _ in range(config.num_layers)
        )
        self.final_norm = nn.LayerNorm(config.hidden_size)
        self._init_parameters(config.seed)

    def _init_parameters(self, seed: int) -> None:
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if param.dim() >= 2 or "emb" in name:
                    param.copy_(torch.randn(param.shape, generator=generator) * 0.02)
                elif "norm" in name and name.endswith("weight"):
                    param.fill_(1.0)
                else:
                    param.zero_()

    def forward(
        self, ids: torch.Tensor, segments: torch.Tensor, mask: torch.Tensor
    ) -> torch.Tensor:
        if ids.shape[1] > self.config.max_len:
            raise ValidationError(
                f"sequence length {ids.shape[1]} exceeds max_len {self.config.max_len}"
            )
        positions = torch.arange(ids.shape[1], device=ids.device).unsqueeze(0)
        x = self.token_emb(ids) + self.position_emb(positions) + self.segment_emb(segments)
        x = self.emb_drop(x)
        key_bias = (1.0 - mask.to(x.dtype)).view(ids.shape[0], 1, 1, ids.shape[1]) * -1e9
        for block in self.blocks:
            x = block(x, key_bias)
        return self.final_norm(x)


def batch_tensors(
    packed: Sequence[PackedInput], pad_id: int, device: torch.device | str = "cpu"
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Pad a list of packed inputs into (ids, segments, mask) tensors."""
    if not packed:
        raise ValidationError("empty batch")
    width = max(len(p) for p in packed)
    ids = torch.full((len(packed), width), pad_id, dtype=torch.long, device=device)
    segments = torch.zeros((len(packed), width), dtype=torch.long, device=device)
    mask = torch.zeros((len(packed), width), dtype=torch.long, device=device)
    for row, p in enumerate(packed):
        length = len(p)
        ids[row, :length] = torch.tensor(p.ids, dtype=torch.long)
        segments[row, :length] = torch.tensor(p.segment_ids, dtype=torch.long)
        mask[row, :length] = 1
    return ids, segments, mask


def encode(packed: PackedInput, encoder: TransformerEncoder, pad_id: int = 0) -> EncoderOutput:
    """Inference-mode encoding of a single packed input."""
    outputs = encode_batch([packed], encoder, pad_id)
    return outputs[0]


def encode_batch(
    packed: Sequence[PackedInput],
    encoder: TransformerEncoder,
    pad_id: int = 0,
    batch_size: int = 32,
) -> list[EncoderOutput]:
    was_training = encoder.training
    encoder.eval()
    outputs: list[EncoderOutput] = []
    try:
        with torch.no_grad():
            for start in range(0, len(packed), batch_size):
                chunk = packed[start : start + batch_size]
                ids, segments, mask = batch_tensors(chunk, pad_id)
                hidden = encoder(ids, segments, mask)
                if not torch.isfinite(hidden).all():
                    raise QuoteFinderError("encoder produced non-finite values")
                for row, p in enumerate(chunk):
                    vectors = hidden[row, : len(p)].detach()
                    outputs.append(EncoderOutput(pooled=vectors[0], token_vectors=vectors))
    finally:
        if was_training:
            encoder.train()
    return outputs
