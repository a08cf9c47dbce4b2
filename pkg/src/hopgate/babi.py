"""bAbI parsing, vocabulary, encoding, positional encoding and synthetic key-value data"""

import logging
import re
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr

from .errors import EncodingError, ParseError

logger = logging.getLogger(__name__)

PAD_TOKEN = "nil"
PAD_ID = 0

_TASK_FILE = re.compile(r"qa(\d+)_.*_(train|test)\.txt$")


class RawSample(BaseModel):
    """One question with the story sentences that precede it"""
    story: list[list[str]]
    query: list[str]
    answer: str
    task_id: int = 0
    supporting_ids: list[int] = Field(default_factory=list)


class Vocab(BaseModel):
    """Closed vocabulary; index 0 is the padding token"""
    words: list[str]
    _index: Optional[dict[str, int]] = PrivateAttr(default=None)

    @property
    def size(self) -> int:
        return len(self.words)

    @property
    def word_to_id(self) -> dict[str, int]:
        if self._index is None:
            self._index = {w: i for i, w in enumerate(self.words)}
        return self._index

    def lookup(self, token: str) -> int:
        try:
            return self.word_to_id[token]
        except KeyError:
            raise EncodingError(f"Token not in vocabulary: {token!r}") from None

    @classmethod
    def synthetic(cls, size: int) -> "Vocab":
        """Vocabulary of placeholder tokens t1..t{size-1} for generated data"""
        return cls(words=[PAD_TOKEN] + [f"t{i}" for i in range(1, size)])


class Sample(BaseModel):
    """Index-encoded sample; `value_ids` is set only for key-value memories"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    story_grid: np.ndarray
    query_ids: np.ndarray
    answer_id: int
    task_id: int = 0
    value_ids: Optional[np.ndarray] = None


class KvDataset(BaseModel):
    """Planted key-value memory plus one query per pair"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    keys: np.ndarray
    values: np.ndarray
    samples: list[Sample]
    vocab: Vocab


class DatasetSummary(BaseModel):
    task_id: int
    n_samples: int
    n_s_max: int
    n_w_max: int
    vocab_size: int


def tokenize(text: str) -> list[str]:
    """Lowercase, treat '?' as a delimiter, split on whitespace, strip trailing '.'"""
    tokens = []
    for raw in text.lower().replace("?", " ").split():
        token = raw.rstrip(".")
        if token:
            tokens.append(token)
    return tokens


def parse_babi(text: str, task_id: int = 0) -> list[RawSample]:
    """
    Parse bAbI v1.2 text into one RawSample per question line

    Args:
        text: File contents; LF or CRLF line endings
        task_id: Task number stamped on every sample

    Returns:
        Samples in file order

    Raises:
        ParseError: Empty input, broken line numbering, or a malformed question line
    """
    samples: list[RawSample] = []
    story: list[list[str]] = []
    previous_number = 0
    seen_line = False

    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        seen_line = True

        head, _, rest = line.partition(" ")
        if not head.isdigit():
            raise ParseError(f"expected a line number, got {head!r}", line_number)
        number = int(head)
        if number == 1:
            story = []
        elif number != previous_number + 1:
            raise ParseError(
                f"line number {number} does not follow {previous_number}", line_number
            )
        previous_number = number

        if "\t" in rest:
            parts = rest.split("\t")
            if len(parts) < 3:
                raise ParseError("question line needs question, answer and support fields", line_number)
            query = tokenize(parts[0])
            answer = parts[1].strip().lower()
            if not answer or len(answer.split()) != 1:
                raise ParseError(f"multi-word or empty answer {parts[1]!r}", line_number)
            if not story:
                raise ParseError("question before any story sentence", line_number)
            try:
                support = [int(s) for s in parts[2].split()]
            except ValueError:
                raise ParseError(f"bad supporting ids {parts[2]!r}", line_number) from None
            samples.append(RawSample(
                story=[list(s) for s in story],
                query=query,
                answer=answer,
                task_id=task_id,
                supporting_ids=support,
            ))
        elif "?" in rest:
            raise ParseError("question line is missing tab separators", line_number)
        else:
            story.append(tokenize(rest))

    if not seen_line:
        raise ParseError("empty input", 0)

    return samples


def load_task_files(data_dir: Path, task_ids: Iterable[int], split: str) -> list[RawSample]:
    """
    Read `qa{K}_*_{split}.txt` for each requested task

    Raises:
        FileNotFoundError: A requested task has no file for the split
    """
    data_dir = Path(data_dir)
    by_task: dict[int, Path] = {}
    for path in data_dir.glob(f"qa*_{split}.txt"):
        match = _TASK_FILE.search(path.name)
        if match:
            by_task[int(match.group(1))] = path

    samples: list[RawSample] = []
    for task_id in task_ids:
        path = by_task.get(task_id)
        if path is None:
            raise FileNotFoundError(f"No {split} file for task {task_id} in {data_dir}")
        task_samples = parse_babi(path.read_text(encoding="utf-8"), task_id=task_id)
        logger.info(f"Loaded {len(task_samples)} {split} samples for task {task_id} from {path.name}")
        samples.extend(task_samples)
    return samples


def build_vocab(samples: Iterable[RawSample]) -> Vocab:
    """Sorted vocabulary over every story, query and answer token, padding first"""
    tokens: set[str] = set()
    for sample in samples:
        for sentence in sample.story:
            tokens.update(sentence)
        tokens.update(sample.query)
        tokens.add(sample.answer)
    tokens.discard(PAD_TOKEN)
    return Vocab(words=[PAD_TOKEN] + sorted(tokens))


def max_sentence_length(samples: Iterable[RawSample]) -> int:
    """n_w: longest story sentence or query over the samples"""
    longest = 1
    for sample in samples:
        longest = max(longest, len(sample.query), *(len(s) for s in sample.story))
    return longest


def _encode_tokens(tokens: list[str], vocab: Vocab, n_w: int) -> np.ndarray:
    row = np.zeros(n_w, dtype=np.int64)
    ids = [vocab.lookup(t) for t in tokens[:n_w]]
    row[: len(ids)] = ids
    return row


def encode(sample: RawSample, vocab: Vocab, n_s: int, n_w: int) -> Sample:
    """
    Map a RawSample onto an n_s x n_w index grid

    Sentences longer than n_w are truncated; only the most recent n_s sentences
    are kept; everything shorter is zero-padded.

    Raises:
        EncodingError: A token is missing from the vocabulary
    """
    if n_s < 1 or n_w < 1:
        raise ValueError(f"n_s and n_w must be positive, got {n_s}, {n_w}")
    grid = np.zeros((n_s, n_w), dtype=np.int64)
    for row, sentence in enumerate(sample.story[-n_s:]):
        grid[row] = _encode_tokens(sentence, vocab, n_w)
    return Sample(
        story_grid=grid,
        query_ids=_encode_tokens(sample.query, vocab, n_w),
        answer_id=vocab.lookup(sample.answer),
        task_id=sample.task_id,
    )


def decode(sample: Sample, vocab: Vocab) -> RawSample:
    """Inverse of encode for in-vocabulary, in-bounds tokens"""
    def words(row: np.ndarray) -> list[str]:
        return [vocab.words[i] for i in row if i != PAD_ID]

    story = [words(row) for row in sample.story_grid if np.any(row != PAD_ID)]
    return RawSample(
        story=story,
        query=words(sample.query_ids),
        answer=vocab.words[sample.answer_id],
        task_id=sample.task_id,
    )


def positional_encoding(n_w: int, d: int) -> np.ndarray:
    """n_w x d matrix with entry(j, k) = (1 - j/J) - (k/d)(1 - 2j/J), 1-based j, k"""
    if n_w < 1 or d < 1:
        raise ValueError(f"n_w and d must be positive, got {n_w}, {d}")
    j = np.arange(1, n_w + 1, dtype=np.float64)[:, None]
    k = np.arange(1, d + 1, dtype=np.float64)[None, :]
    return (1.0 - j / n_w) - (k / d) * (1.0 - 2.0 * j / n_w)


def split_validation(
    samples: list[RawSample], fraction: float = 0.1
) -> tuple[list[RawSample], list[RawSample]]:
    """Hold out the last `fraction` of each task's samples"""
    by_task: dict[int, list[RawSample]] = {}
    for sample in samples:
        by_task.setdefault(sample.task_id, []).append(sample)

    train: list[RawSample] = []
    valid: list[RawSample] = []
    for task_id in sorted(by_task):
        task_samples = by_task[task_id]
        n_valid = int(round(len(task_samples) * fraction))
        cut = len(task_samples) - n_valid
        train.extend(task_samples[:cut])
        valid.extend(task_samples[cut:])
    return train, valid


def dataset_summary(samples: list[RawSample], vocab: Vocab) -> list[DatasetSummary]:
    by_task: dict[int, list[RawSample]] = {}
    for sample in samples:
        by_task.setdefault(sample.task_id, []).append(sample)
    return [
        DatasetSummary(
            task_id=task_id,
            n_samples=len(task_samples),
            n_s_max=max(len(s.story) for s in task_samples),
            n_w_max=max_sentence_length(task_samples),
            vocab_size=vocab.size,
        )
        for task_id, task_samples in sorted(by_task.items())
    ]


def _noisy_copy(
    rng: np.random.Generator, keys: np.ndarray, index: int, vocab_size: int
) -> np.ndarray:
    """Key `index` with one position replaced, provided it stays uniquely nearest to that key"""
    key = keys[index]
    if key.shape[0] < 2:
        return key.copy()
    query = key.copy()
    position = int(rng.integers(key.shape[0]))
    query[position] = int(rng.integers(1, vocab_size))
    matches = (keys == query[None, :]).sum(axis=1)
    best = np.flatnonzero(matches == matches.max())
    if best.tolist() == [index]:
        return query
    return key.copy()


def synth_kv(seed: int, n_pairs: int, n_w: int, vocab_size: int) -> KvDataset:
    """
    Deterministic key-value memory with one noisy query per key

    Keys are distinct random windows of n_w tokens; each key is paired with a
    single-token value. The query for pair i is key i with at most one token
    replaced and still closest to key i by position-wise overlap, so its answer
    is value i.
    """
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be at least 1, got {n_pairs}")
    if vocab_size < 2:
        raise ValueError(f"vocab_size must leave room for a real token, got {vocab_size}")

    rng = np.random.default_rng(seed)
    keys = np.zeros((n_pairs, n_w), dtype=np.int64)
    seen: set[bytes] = set()
    for i in range(n_pairs):
        for _ in range(1000):
            candidate = rng.integers(1, vocab_size, size=n_w, dtype=np.int64)
            if candidate.tobytes() not in seen:
                break
        seen.add(candidate.tobytes())
        keys[i] = candidate
    values = rng.integers(1, vocab_size, size=n_pairs, dtype=np.int64)

    samples = [
        Sample(
            story_grid=keys,
            query_ids=_noisy_copy(rng, keys, i, vocab_size),
            answer_id=int(values[i]),
            value_ids=values,
        )
        for i in range(n_pairs)
    ]
    return KvDataset(keys=keys, values=values, samples=samples, vocab=Vocab.synthetic(vocab_size))
