"""Subword vocabulary induction and greedy longest-match tokenization.

The vocabulary is frequency-based: specials, then every single character
actually seen (word-initial form and ``##``-continuation form counted
separately), then multi-character pieces ranked by corpus frequency with
lexicographic tie-breaking. Tokenization is classic greedy longest match
per whitespace word; a word whose segmentation fails becomes one [UNK].
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass

from .errors import ValidationError

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN)
CONTINUATION_MARKER = "##"

DEFAULT_MAX_LEN = 32


def normalize_text(text: str) -> str:
    """NFC-normalize, lowercase, and collapse whitespace."""
    return " ".join(unicodedata.normalize("NFC", text).lower().split())


class Vocab:
    """Immutable token -> id map with fixed special ids 0..3."""

    def __init__(self, tokens, max_vocab: int):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise ValidationError(f"vocab must start with {SPECIAL_TOKENS}, got {tokens[:4]}")
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocab tokens must be unique")
        if len(tokens) > max_vocab:
            raise ValidationError(f"{len(tokens)} tokens exceed max_vocab={max_vocab}")
        self.tokens = tokens
        self.max_vocab = max_vocab
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    pad_id = 0
    unk_id = 1
    cls_id = 2
    sep_id = 3

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids[token]

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def save(self, path):
        """One token per line; the line number (0-based) is the id."""
        with open(path, "w", encoding="utf-8") as fh:
            for token in self.tokens:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tokens, max_vocab=len(tokens))

    @classmethod
    def from_tokens(cls, tokens, max_vocab=None):
        tokens = list(tokens)
        return cls(tokens, max_vocab if max_vocab is not None else len(tokens))


@dataclass
class TokenSequence:
    """Fixed-length id sequence: [CLS] pieces... [SEP] [PAD]...."""

    ids: list[int]
    attention_length: int

    def __post_init__(self):
        if not 2 <= self.attention_length <= len(self.ids):
            raise ValidationError(
                f"attention_length {self.attention_length} out of range for {len(self.ids)} ids"
            )

    def __len__(self):
        return len(self.ids)


def build_vocab(corpus, max_vocab: int) -> Vocab:
    """Induce a subword vocabulary from a corpus of texts.

    Layout: 4 specials, every seen single-character piece (both the
    word-initial and the ``##`` continuation form, sorted), then
    multi-character pieces in greedy frequency order (ties lexicographic)
    until ``max_vocab`` entries.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    if max_vocab < 8:
        raise ValidationError(f"max_vocab must be at least 8, got {max_vocab}")

    word_counts: Counter = Counter()
    for text in corpus:
        word_counts.update(normalize_text(text).split())

    char_pieces = set()
    merged_counts: Counter = Counter()
    for word, count in word_counts.items():
        for i in range(len(word)):
            piece = word[i] if i == 0 else CONTINUATION_MARKER + word[i]
            char_pieces.add(piece)
            for j in range(i + 2, len(word) + 1):
                merged = word[i:j] if i == 0 else CONTINUATION_MARKER + word[i:j]
                merged_counts[merged] += count

    tokens = list(SPECIAL_TOKENS)
    if len(tokens) + len(char_pieces) > max_vocab:
        raise ValidationError(
            f"max_vocab={max_vocab} too small to cover {len(char_pieces)} single-character pieces"
        )
    tokens.extend(sorted(char_pieces))
    for piece, _ in sorted(merged_counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if len(tokens) >= max_vocab:
            break
        tokens.append(piece)
    return Vocab(tokens, max_vocab)


def _segment_word(word: str, vocab: Vocab) -> list[str]:
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while end > start:
            candidate = word[start:end] if start == 0 else CONTINUATION_MARKER + word[start:end]
            if candidate in vocab:
                match = candidate
                break
            end -= 1
        if match is None:
            return [UNK_TOKEN]
        pieces.append(match)
        start = end
    return pieces


def tokenize(text: str, vocab: Vocab, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    """Convert text to [CLS] pieces [SEP] padded to exactly ``max_len`` ids.

    Total and deterministic: any text tokenizes; pieces beyond
    ``max_len - 2`` are truncated before [SEP] is appended.
    """
    if max_len < 3:
        raise ValidationError(f"max_len must be at least 3, got {max_len}")
    pieces = []
    for word in normalize_text(text).split():
        pieces.extend(_segment_word(word, vocab))
    pieces = pieces[: max_len - 2]
    ids = [vocab.cls_id]
    ids.extend(vocab.id_of(piece) for piece in pieces)
    ids.append(vocab.sep_id)
    attention_length = len(ids)
    ids.extend([vocab.pad_id] * (max_len - len(ids)))
    return TokenSequence(ids=ids, attention_length=attention_length)


def detokenize(sequence: TokenSequence, vocab: Vocab) -> str:
    """Best-effort inverse of tokenize; exact for fully covered short texts."""
    words: list[str] = []
    for token_id in sequence.ids[: sequence.attention_length]:
        token = vocab.token_of(token_id)
        if token in (PAD_TOKEN, CLS_TOKEN, SEP_TOKEN):
            continue
        if token.startswith(CONTINUATION_MARKER) and words:
            words[-1] += token[len(CONTINUATION_MARKER):]
        else:
            words.append(token)
    return " ".join(words)
