"""Dataset ingestion and synthetic bilingual corpus generation.

File formats (one JSON object per line, blank lines ignored):
  labeled:   {"text": str, "label": str, "lang": str?}
  parallel:  optional header {"src_lang": str, "tgt_lang": str},
             then {"src": str, "tgt": str}

The synthetic generator builds two template-grammar "languages": language A
sentences come from per-intent templates over an invented vocabulary, and
language B is the token-by-token image of A under a seeded bijective word
map, optionally with a fixed per-template word-order permutation. Labels
survive translation by construction, which makes cross-lingual transfer
claims exactly testable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, ValidationError
from .seeding import rng_for
from .tokenizer import normalize_text


@dataclass
class Utterance:
    text: str
    label: str | None = None
    lang: str | None = None


@dataclass
class LabeledDataset:
    """Utterances plus dense 0..N-1 label ids and the string -> id map."""

    utterances: list[Utterance]
    label_ids: list[int]
    label_map: dict[str, int]

    def __post_init__(self):
        if len(self.utterances) != len(self.label_ids):
            raise ValidationError("label ids must align with utterances")

    def __len__(self):
        return len(self.utterances)

    def texts(self) -> list[str]:
        return [u.text for u in self.utterances]

    def n_classes(self) -> int:
        return len(self.label_map)

    def class_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {i: 0 for i in range(self.n_classes())}
        for label_id in self.label_ids:
            counts[label_id] += 1
        return counts


@dataclass
class ParallelPair:
    src: str
    tgt: str


@dataclass
class ParallelCorpus:
    pairs: list[ParallelPair]
    src_lang: str = "src"
    tgt_lang: str = "tgt"

    def __post_init__(self):
        if not self.pairs:
            raise ValidationError("parallel corpus must contain at least one pair")
        for i, pair in enumerate(self.pairs):
            if not pair.src or not pair.tgt:
                raise ValidationError(f"pair {i} has an empty side")

    def __len__(self):
        return len(self.pairs)


def remap_labels(labels) -> tuple[list[int], dict[str, int]]:
    """Map label strings to dense ids, sorted label strings -> 0..N-1."""
    label_map = {label: i for i, label in enumerate(sorted(set(labels)))}
    return [label_map[label] for label in labels], label_map


def _iter_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: line {line_no} is not valid JSON", line=line_no) from exc
            if not isinstance(obj, dict):
                raise DataFormatError(f"{path}: line {line_no} is not a JSON object", line=line_no)
            yield line_no, obj


def load_labeled_jsonl(path) -> LabeledDataset:
    """Load utterances in file order; labels remapped to dense sorted ids."""
    utterances: list[Utterance] = []
    labels: list[str] = []
    for line_no, obj in _iter_jsonl(path):
        if "text" not in obj or "label" not in obj:
            raise DataFormatError(
                f"{path}: line {line_no} must have 'text' and 'label' fields", line=line_no
            )
        text = str(obj["text"])
        if not normalize_text(text):
            raise DataFormatError(f"{path}: line {line_no} has empty text", line=line_no)
        utterances.append(Utterance(text=text, label=str(obj["label"]), lang=obj.get("lang")))
        labels.append(str(obj["label"]))
    if not utterances:
        raise DataFormatError(f"{path}: no utterances found")
    label_ids, label_map = remap_labels(labels)
    return LabeledDataset(utterances=utterances, label_ids=label_ids, label_map=label_map)


def load_parallel_jsonl(path, src_lang=None, tgt_lang=None) -> ParallelCorpus:
    """Load translation pairs in file order, duplicates preserved.

    An optional first line without 'src'/'tgt' but with 'src_lang'/'tgt_lang'
    sets the language tags; explicit arguments win over the header.
    """
    pairs: list[ParallelPair] = []
    header_src, header_tgt = None, None
    for line_no, obj in _iter_jsonl(path):
        if not pairs and "src" not in obj and "tgt" not in obj and (
            "src_lang" in obj or "tgt_lang" in obj
        ):
            header_src = obj.get("src_lang")
            header_tgt = obj.get("tgt_lang")
            continue
        if "src" not in obj or "tgt" not in obj:
            raise DataFormatError(
                f"{path}: line {line_no} must have 'src' and 'tgt' fields", line=line_no
            )
        pairs.append(ParallelPair(src=str(obj["src"]), tgt=str(obj["tgt"])))
    if not pairs:
        raise DataFormatError(f"{path}: no parallel pairs found")
    return ParallelCorpus(
        pairs=pairs,
        src_lang=src_lang or header_src or "src",
        tgt_lang=tgt_lang or header_tgt or "tgt",
    )


def save_labeled_jsonl(dataset: LabeledDataset, path):
    with open(path, "w", encoding="utf-8") as fh:
        for utt in dataset.utterances:
            row = {"text": utt.text, "label": utt.label, "lang": utt.lang}
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def save_parallel_jsonl(corpus: ParallelCorpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"src_lang": corpus.src_lang, "tgt_lang": corpus.tgt_lang}) + "\n")
        for pair in corpus.pairs:
            fh.write(json.dumps({"src": pair.src, "tgt": pair.tgt}, sort_keys=True) + "\n")


# -- synthetic bilingual corpus ----------------------------------------------

LANG_A = "langA"
LANG_B = "langB"

_CONSONANTS_A = "bdfgklmnprst"
_VOWELS_A = "aeiou"
_CONSONANTS_B = "vwxzjqhc"
_VOWELS_B = ("aa", "ee", "ii", "oo", "uu")

_KEYWORDS_PER_INTENT = 3
_MIN_FILLERS = 4
_TEMPLATE_LENGTHS = (4, 5, 6, 7)
_KEYWORDS_PER_TEMPLATE = 2


@dataclass(frozen=True)
class SyntheticConfig:
    n_intents: int = 4
    templates_per_intent: int = 5
    vocab_size_per_language: int = 48
    samples_per_intent: int = 50
    permute_word_order: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("n_intents", "templates_per_intent", "vocab_size_per_language",
                     "samples_per_intent"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        if self.n_intents < 2:
            raise ValidationError(f"n_intents must be at least 2, got {self.n_intents}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed!r}")


@dataclass(frozen=True)
class Template:
    """A sentence skeleton: fixed keyword slots plus free filler slots.

    ``slots`` entries are either a concrete keyword string or None for a
    filler slot; ``permutation`` reorders the translated tokens in language B.
    """

    intent: int
    slots: tuple
    permutation: tuple


@dataclass
class SyntheticCorpus:
    labeled_a: LabeledDataset
    labeled_b: LabeledDataset
    parallel: ParallelCorpus
    word_map: dict[str, str]
    templates: list[Template]
    pair_templates: list[int] = field(default_factory=list)


def _word_list(consonants, vowels, rng) -> list[str]:
    words = [c1 + v1 + c2 + v2 for c1 in consonants for v1 in vowels
             for c2 in consonants for v2 in vowels]
    rng.shuffle(words)
    return words


def generate_synthetic_corpus(config: SyntheticConfig) -> SyntheticCorpus:
    """Build (labeled A, labeled B, parallel A->B) plus generation metadata."""
    rng = rng_for(config.seed, "synthetic")
    size = config.vocab_size_per_language
    needed = config.n_intents * _KEYWORDS_PER_INTENT + _MIN_FILLERS
    if size < needed:
        raise ValidationError(
            f"vocab_size_per_language={size} too small: "
            f"{config.n_intents} intents need at least {needed} words"
        )
    words_a = _word_list(_CONSONANTS_A, _VOWELS_A, rng)[:size]
    words_b = _word_list(_CONSONANTS_B, _VOWELS_B, rng)[:size]
    word_map = dict(zip(words_a, words_b))

    keywords = [
        words_a[i * _KEYWORDS_PER_INTENT : (i + 1) * _KEYWORDS_PER_INTENT]
        for i in range(config.n_intents)
    ]
    fillers = words_a[config.n_intents * _KEYWORDS_PER_INTENT :]

    templates: list[Template] = []
    for intent in range(config.n_intents):
        seen = set()
        attempts = 0
        while len(seen) < config.templates_per_intent:
            attempts += 1
            if attempts > 200 * config.templates_per_intent:
                raise ValidationError(
                    f"vocabulary too small to build {config.templates_per_intent} "
                    f"distinct templates for intent {intent}"
                )
            length = int(rng.choice(_TEMPLATE_LENGTHS))
            positions = sorted(rng.choice(length, size=_KEYWORDS_PER_TEMPLATE, replace=False))
            picks = rng.choice(_KEYWORDS_PER_INTENT, size=_KEYWORDS_PER_TEMPLATE, replace=False)
            slots = tuple(
                keywords[intent][picks[positions.index(i)]] if i in positions else None
                for i in range(length)
            )
            if slots in seen:
                continue
            seen.add(slots)
            if config.permute_word_order:
                permutation = tuple(int(p) for p in rng.permutation(length))
            else:
                permutation = tuple(range(length))
            templates.append(Template(intent=intent, slots=slots, permutation=permutation))

    utts_a: list[Utterance] = []
    utts_b: list[Utterance] = []
    pairs: list[ParallelPair] = []
    pair_templates: list[int] = []
    for intent in range(config.n_intents):
        label = f"intent{intent:02d}"
        base = intent * config.templates_per_intent
        for sample in range(config.samples_per_intent):
            template_id = base + sample % config.templates_per_intent
            template = templates[template_id]
            n_fill = sum(1 for slot in template.slots if slot is None)
            chosen = rng.choice(len(fillers), size=n_fill, replace=False)
            fill_iter = iter(chosen)
            tokens_a = [
                slot if slot is not None else fillers[int(next(fill_iter))]
                for slot in template.slots
            ]
            tokens_b = [word_map[w] for w in tokens_a]
            tokens_b = [tokens_b[p] for p in template.permutation]
            text_a = " ".join(tokens_a)
            text_b = " ".join(tokens_b)
            utts_a.append(Utterance(text=text_a, label=label, lang=LANG_A))
            utts_b.append(Utterance(text=text_b, label=label, lang=LANG_B))
            pairs.append(ParallelPair(src=text_a, tgt=text_b))
            pair_templates.append(template_id)

    ids_a, map_a = remap_labels([u.label for u in utts_a])
    ids_b, map_b = remap_labels([u.label for u in utts_b])
    return SyntheticCorpus(
        labeled_a=LabeledDataset(utts_a, ids_a, map_a),
        labeled_b=LabeledDataset(utts_b, ids_b, map_b),
        parallel=ParallelCorpus(pairs, src_lang=LANG_A, tgt_lang=LANG_B),
        word_map=word_map,
        templates=templates,
        pair_templates=pair_templates,
    )
