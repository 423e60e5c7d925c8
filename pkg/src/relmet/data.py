"""Corpus handling: JSONL loading, entity markers, vocabulary, episodic
sampling, input encoding, and a synthetic corpus generator."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
E1_START = "[E1_start]"
E1_END = "[E1_end]"
E2_START = "[E2_start]"
E2_END = "[E2_end]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, E1_START, E1_END, E2_START, E2_END)
PAD_ID = 0
UNK_ID = 1


class CorpusError(ValueError):
    """Raised when a corpus file or record violates the expected schema."""


def _check_span(span, n_tokens):
    start, end = span
    return 0 <= start <= end < n_tokens


@dataclass(frozen=True)
class Instance:
    """One labeled example: tokens plus inclusive head/tail entity spans."""

    tokens: tuple[str, ...]
    head_span: tuple[int, int]
    tail_span: tuple[int, int]
    label: str | None = None

    def validate(self):
        n = len(self.tokens)
        for name, span in (("head_span", self.head_span), ("tail_span", self.tail_span)):
            if not _check_span(span, n):
                raise ValueError(f"invalid span: {name}={span} for {n} tokens")
        h0, h1 = self.head_span
        t0, t1 = self.tail_span
        if h0 <= t1 and t0 <= h1:
            raise ValueError(
                f"invalid span: head_span={self.head_span} overlaps tail_span={self.tail_span}"
            )


@dataclass
class Dataset:
    instances: list[Instance]
    label_set: set[str] = field(init=False)

    def __post_init__(self):
        self.label_set = {i.label for i in self.instances if i.label is not None}

    def __len__(self):
        return len(self.instances)


def load_jsonl(path) -> Dataset:
    """Load a corpus file: one JSON object per line with keys
    ``tokens``, ``h``, ``t`` (two-int inclusive spans) and optional ``relation``."""
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(rec, dict) or not isinstance(rec.get("tokens"), list):
                raise CorpusError(f"line {lineno}: record must be an object with a 'tokens' array")
            try:
                tokens = tuple(str(t) for t in rec["tokens"])
                head = tuple(int(v) for v in rec["h"])
                tail = tuple(int(v) for v in rec["t"])
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"line {lineno}: missing or malformed field ({exc})") from exc
            if len(head) != 2 or len(tail) != 2:
                raise CorpusError(f"line {lineno}: spans must be two-integer arrays")
            label = rec.get("relation")
            inst = Instance(tokens, head, tail, None if label is None else str(label))
            try:
                inst.validate()
            except ValueError as exc:
                raise CorpusError(f"line {lineno} (instance {lineno - 1}): {exc}") from exc
            instances.append(inst)
    return Dataset(instances)


def save_jsonl(data: Dataset, path):
    """Write a Dataset back to the JSONL corpus format (round-trips load_jsonl)."""
    with open(path, "w", encoding="utf-8") as fh:
        for inst in data.instances:
            rec = {"tokens": list(inst.tokens), "h": list(inst.head_span), "t": list(inst.tail_span)}
            if inst.label is not None:
                rec["relation"] = inst.label
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def insert_entity_markers(inst: Instance) -> Instance:
    """Wrap the head span in [E1_start]/[E1_end] and the tail span in
    [E2_start]/[E2_end].  Returned spans select the original entity tokens
    (markers excluded); the token count grows by exactly 4.

    Must not be applied twice: the operation does not detect prior markers.
    """
    inst.validate()
    spans = [(inst.head_span, E1_START, E1_END), (inst.tail_span, E2_START, E2_END)]
    tokens = list(inst.tokens)
    # Insert around the later span first so earlier indices stay valid.
    spans.sort(key=lambda s: s[0][0], reverse=True)
    for (start, end), mark_start, mark_end in spans:
        tokens.insert(end + 1, mark_end)
        tokens.insert(start, mark_start)

    def shift(span, other_start):
        delta = 1 if span[0] < other_start else 3
        return (span[0] + delta, span[1] + delta)

    new_head = shift(inst.head_span, inst.tail_span[0])
    new_tail = shift(inst.tail_span, inst.head_span[0])
    return Instance(tuple(tokens), new_head, new_tail, inst.label)


@dataclass
class Vocabulary:
    """Token-to-id map with PAD at id 0, UNK at id 1, then entity markers."""

    token_to_id: dict[str, int]

    def __len__(self):
        return len(self.token_to_id)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def save(self, path):
        tokens = sorted(self.token_to_id, key=self.token_to_id.get)
        for tok in tokens:
            if "\n" in tok:
                raise ValueError(f"token contains newline, cannot persist: {tok!r}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(tokens) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = fh.read().splitlines()
        vocab = cls({tok: i for i, tok in enumerate(tokens)})
        if len(vocab) != len(tokens):
            raise ValueError("vocabulary file contains duplicate tokens")
        return vocab


def build_vocab(data: Dataset, min_freq: int = 1) -> Vocabulary:
    """Assign contiguous ids to every corpus token with frequency >= min_freq.

    Special tokens are always present; corpus tokens are ordered by
    (frequency desc, token) for determinism.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: dict[str, int] = {}
    for inst in data.instances:
        for tok in inst.tokens:
            counts[tok] = counts.get(tok, 0) + 1
    mapping = {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}
    kept = [t for t, c in counts.items() if c >= min_freq and t not in mapping]
    kept.sort(key=lambda t: (-counts[t], t))
    for tok in kept:
        mapping[tok] = len(mapping)
    return Vocabulary(mapping)


@dataclass(frozen=True)
class SamplerConfig:
    """Episode shape: c classes x k instances per batch."""

    num_classes: int = 24
    instances_per_class: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.instances_per_class < 2:
            raise ValueError("instances_per_class must be >= 2")


def sample_episode(data: Dataset, cfg: SamplerConfig, rng: np.random.Generator) -> list[Instance]:
    """Draw c distinct classes uniformly, then k instances per class.

    Classes with fewer than k members are drawn with replacement so rare
    classes stay trainable.
    """
    by_label: dict[str, list[Instance]] = {}
    for inst in data.instances:
        if inst.label is not None:
            by_label.setdefault(inst.label, []).append(inst)
    labels = sorted(by_label)
    if len(labels) < cfg.num_classes:
        raise ValueError(
            f"insufficient classes: need {cfg.num_classes}, dataset has {len(labels)}"
        )
    chosen = rng.choice(len(labels), size=cfg.num_classes, replace=False)
    episode = []
    for li in chosen:
        members = by_label[labels[li]]
        replace = len(members) < cfg.instances_per_class
        idx = rng.choice(len(members), size=cfg.instances_per_class, replace=replace)
        episode.extend(members[i] for i in idx)
    return episode


@dataclass
class EncodedBatch:
    """Fixed-shape numeric view of a list of instances.

    Position matrices hold offsets to the head/tail span starts, clipped to
    [-max_offset, max_offset] and shifted by +max_offset so they index a
    (2 * max_offset + 1)-row embedding table.
    """

    token_ids: np.ndarray  # (m, max_len) int64
    head_pos: np.ndarray  # (m, max_len) int64
    tail_pos: np.ndarray  # (m, max_len) int64
    labels: np.ndarray  # (m,) int64, -1 for unlabeled
    max_offset: int
    truncated_entities: int = 0
    label_names: list[str] = field(default_factory=list)

    def __len__(self):
        return self.token_ids.shape[0]


def encode_inputs(
    insts, vocab: Vocabulary, max_len: int, max_offset: int | None = None
) -> EncodedBatch:
    """Pad/truncate instances to max_len token ids plus two relative-position
    channels.  Truncation that cuts an entity span is tolerated and counted."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if max_offset is None:
        max_offset = max_len
    m = len(insts)
    token_ids = np.zeros((m, max_len), dtype=np.int64)
    head_pos = np.zeros((m, max_len), dtype=np.int64)
    tail_pos = np.zeros((m, max_len), dtype=np.int64)
    labels = np.full(m, -1, dtype=np.int64)
    label_ids: dict[str, int] = {}
    label_names: list[str] = []
    positions = np.arange(max_len)
    truncated = 0
    for i, inst in enumerate(insts):
        ids = [vocab.id_of(t) for t in inst.tokens[:max_len]]
        token_ids[i, : len(ids)] = ids
        head_off = np.clip(positions - inst.head_span[0], -max_offset, max_offset)
        tail_off = np.clip(positions - inst.tail_span[0], -max_offset, max_offset)
        head_pos[i] = head_off + max_offset
        tail_pos[i] = tail_off + max_offset
        if inst.head_span[1] >= max_len or inst.tail_span[1] >= max_len:
            truncated += 1
        if inst.label is not None:
            if inst.label not in label_ids:
                label_ids[inst.label] = len(label_ids)
                label_names.append(inst.label)
            labels[i] = label_ids[inst.label]
    return EncodedBatch(token_ids, head_pos, tail_pos, labels, max_offset, truncated, label_names)


def synth_generate(
    num_classes: int,
    per_class: int,
    vocab_size: int,
    noise: float,
    rng: np.random.Generator,
    *,
    context_pool: int = 40,
    min_len: int = 10,
    max_len: int = 14,
) -> Dataset:
    """Generate a labeled corpus with disjoint per-class signature token sets.

    Each class owns one fixed head token, one fixed tail token, and
    `context_pool` context tokens; remaining vocabulary ids form a shared
    distractor pool filling a `noise` fraction of each sentence.  Spans sit on
    the head/tail signature tokens.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if per_class < 2:
        raise ValueError("per_class must be >= 2")
    if not 0.0 <= noise < 1.0:
        raise ValueError("noise must be in [0, 1)")
    if min_len < 4 or max_len < min_len:
        raise ValueError("need max_len >= min_len >= 4")
    block = 2 + context_pool
    n_distractors = vocab_size - num_classes * block
    if n_distractors < (8 if noise > 0 else 0):
        raise ValueError(
            f"vocab_size too small: need >= {num_classes * block + (8 if noise > 0 else 0)}"
        )
    tokens = [f"w{i:05d}" for i in range(vocab_size)]
    distractors = tokens[num_classes * block :]
    instances = []
    for c in range(num_classes):
        base = c * block
        head_tok, tail_tok = tokens[base], tokens[base + 1]
        ctx = tokens[base + 2 : base + block]
        label = f"rel{c:03d}"
        for _ in range(per_class):
            length = int(rng.integers(min_len, max_len + 1))
            n_noise = int(round(noise * length))
            n_noise = min(n_noise, length - 2)
            sent = [""] * length
            head_i, tail_i = rng.choice(length, size=2, replace=False)
            sent[head_i], sent[tail_i] = head_tok, tail_tok
            rest = [j for j in range(length) if j not in (head_i, tail_i)]
            noise_slots = set(rng.choice(len(rest), size=n_noise, replace=False).tolist())
            for slot, j in enumerate(rest):
                pool = distractors if slot in noise_slots else ctx
                sent[j] = pool[int(rng.integers(len(pool)))]
            instances.append(
                Instance(tuple(sent), (int(head_i), int(head_i)), (int(tail_i), int(tail_i)), label)
            )
    return Dataset(instances)
