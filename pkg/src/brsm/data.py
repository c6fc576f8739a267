"""Input pipelines: IDX files, image pools, token streams and embeddings."""

import gzip
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .dense import DTYPE

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
SYNTHETIC_BITS = 14
UNK = "<unk>"
EOS = "<eos>"


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedError(IdxError):
    pass


class DimensionOverflowError(IdxError):
    pass


@dataclass
class IdxArray:
    magic: int
    data: np.ndarray

    @property
    def is_images(self):
        return self.magic == IDX_IMAGES_MAGIC

    def scaled(self):
        """Images as float64 in [0, 1]; labels unchanged."""
        if self.is_images:
            return self.data.astype(DTYPE) / 255.0
        return self.data.astype(np.int64)


def read_idx(payload):
    """Parse an unsigned-byte IDX container (images or labels)."""
    if len(payload) < 4:
        raise TruncatedError("IDX payload shorter than its magic number")
    (magic,) = struct.unpack(">i", payload[:4])
    if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
        raise BadMagicError(f"unexpected IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(payload) < header_end:
        raise TruncatedError("IDX header truncated")
    dims = struct.unpack(f">{ndim}i", payload[4:header_end])
    if any(d < 0 for d in dims):
        raise DimensionOverflowError(f"negative dimension in {dims}")
    count = 1
    for d in dims:
        count *= d
        if count > len(payload):
            raise DimensionOverflowError(f"dimensions {dims} exceed payload size")
    if len(payload) - header_end < count:
        raise TruncatedError(f"expected {count} bytes of data, found {len(payload) - header_end}")
    if len(payload) - header_end > count:
        raise IdxError("trailing bytes after IDX data")
    data = np.frombuffer(payload, dtype=np.uint8, count=count, offset=header_end).reshape(dims)
    return IdxArray(magic, data.copy())


def write_idx(arr):
    dims = arr.data.shape
    header = struct.pack(f">i{len(dims)}i", arr.magic, *dims)
    return header + np.ascontiguousarray(arr.data, dtype=np.uint8).tobytes()


def read_idx_file(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return read_idx(fh.read())


class ImagePool:
    """Flattened images grouped by label."""

    def __init__(self, by_label):
        self.by_label = {int(k): np.asarray(v, dtype=DTYPE) for k, v in by_label.items()}
        dims = {v.shape[1] for v in self.by_label.values()}
        if len(dims) != 1 or any(len(v) == 0 for v in self.by_label.values()):
            raise ValueError("every label needs at least one image and all images one dimension")
        self.dim = dims.pop()
        self._table = None

    @classmethod
    def from_arrays(cls, images, labels):
        images = np.asarray(images, dtype=DTYPE).reshape(len(images), -1)
        labels = np.asarray(labels)
        return cls({int(v): images[labels == v] for v in np.unique(labels)})

    @classmethod
    def from_idx_files(cls, images_path, labels_path, limit_per_label=None):
        images = read_idx_file(images_path).scaled()
        labels = read_idx_file(labels_path).scaled()
        pool = cls.from_arrays(images, labels)
        if limit_per_label:
            pool = cls({k: v[:limit_per_label] for k, v in pool.by_label.items()})
        return pool

    @classmethod
    def synthetic(cls, rng, n_labels=10, per_label=50, dim=784, noise=0.25):
        """Noisy prototypes: one fixed random image per label plus per-image noise.

        Labels stay identifiable from any single image, but no image repeats,
        so a learner cannot memorize observations.
        """
        return cls.synthetic_pair(rng, n_labels, per_label, dim, noise)[0]

    @classmethod
    def synthetic_pair(cls, rng, n_labels=10, per_label=50, dim=784, noise=0.25):
        """Train and held-out pools sharing prototypes but with independent noise."""
        protos = rng.uniform(0.0, 1.0, size=(n_labels, dim))

        def draw():
            noisy = protos[:, None, :] + noise * rng.standard_normal((n_labels, per_label, dim))
            return cls(dict(enumerate(np.clip(noisy, 0.0, 1.0))))

        return draw(), draw()

    def sizes(self):
        return {k: len(v) for k, v in self.by_label.items()}

    def observe(self, labels, mode, rng=None):
        """Images for a label (or batch of labels).

        ``fixed`` returns each label's first image; ``random`` draws uniformly
        from the label's images.
        """
        scalar = np.ndim(labels) == 0
        labels = np.atleast_1d(np.asarray(labels))
        missing = set(labels.tolist()) - set(self.by_label)
        if missing:
            raise KeyError(f"no images for labels {sorted(missing)}")
        out = np.empty((len(labels), self.dim), dtype=DTYPE)
        for i, label in enumerate(labels.tolist()):
            imgs = self.by_label[label]
            if mode == "fixed":
                out[i] = imgs[0]
            elif mode == "random":
                out[i] = imgs[rng.integers(len(imgs))]
            else:
                raise ValueError(f"unknown observation mode {mode!r}")
        return out[0] if scalar else out


class InputScaler:
    """Center by the global mean and scale so a typical vector has unit norm.

    ``x' = (x - mean) / (std * sqrt(d))`` with statistics taken over every
    entry of the fitting data.
    """

    def __init__(self, mean=0.0, scale=1.0):
        self.mean = float(mean)
        self.scale = float(scale)

    @classmethod
    def fit(cls, data):
        data = np.asarray(data, dtype=DTYPE)
        std = float(data.std()) or 1.0
        return cls(data.mean(), std * np.sqrt(data.shape[-1]))

    def __call__(self, x):
        return (np.asarray(x, dtype=DTYPE) - self.mean) / self.scale

    def apply_pool(self, pool):
        return ImagePool({k: self(v) for k, v in pool.by_label.items()})


def synthetic_embedding(index, vocab_size=None):
    """28-bit code: 14-bit big-endian binary of ``index`` then its complement."""
    index = int(index)
    if not 0 <= index < 2**SYNTHETIC_BITS:
        raise ValueError(f"index {index} does not fit in {SYNTHETIC_BITS} bits")
    if vocab_size is not None and index >= vocab_size:
        raise ValueError(f"index {index} outside vocabulary of size {vocab_size}")
    bits = np.array([(index >> (SYNTHETIC_BITS - 1 - b)) & 1 for b in range(SYNTHETIC_BITS)])
    return np.concatenate([bits, 1 - bits]).astype(DTYPE)


def synthetic_embedding_table(vocab_size):
    return np.stack([synthetic_embedding(i) for i in range(vocab_size)])


class EmbeddingError(ValueError):
    pass


class EmbeddingTable:
    def __init__(self, tokens, vectors):
        self.tokens = list(tokens)
        self.vectors = np.asarray(vectors, dtype=DTYPE)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, token):
        return self.vectors[self.index[token]]

    def for_vocabulary(self, vocab):
        """Matrix of vectors ordered by ``vocab`` indices; every token must resolve."""
        missing = [tok for tok in vocab.tokens if tok not in self.index]
        if missing:
            raise EmbeddingError(f"{len(missing)} vocabulary tokens lack vectors, e.g. {missing[:5]}")
        return np.stack([self[tok] for tok in vocab.tokens])


def load_embedding_file(text):
    """Parse ``token v1 v2 ...`` lines, with an optional ``count dim`` header."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise EmbeddingError("empty embedding file")
    first = lines[0].split()
    expected_dim = None
    if len(first) == 2 and all(tok.isdigit() for tok in first):
        expected_dim = int(first[1])
        lines = lines[1:]
    vectors = {}
    for lineno, line in enumerate(lines, 1):
        parts = line.split()
        token, values = parts[0], parts[1:]
        try:
            vec = [float(v) for v in values]
        except ValueError:
            raise EmbeddingError(f"line {lineno}: unparseable number") from None
        if expected_dim is None:
            expected_dim = len(vec)
        if len(vec) != expected_dim or not vec:
            raise EmbeddingError(f"line {lineno}: dimension {len(vec)} != {expected_dim}")
        if token in vectors:
            log.warning("duplicate embedding for %r; keeping the last one", token)
        vectors[token] = vec
    if not vectors:
        raise EmbeddingError("embedding file has a header but no vectors")
    return EmbeddingTable(list(vectors), list(vectors.values()))


class Vocabulary:
    def __init__(self, tokens):
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def build(cls, tokens):
        """First-occurrence ordering of the training tokens."""
        return cls(dict.fromkeys(tokens))

    def encode(self, tokens):
        unk = self.index.get(UNK)
        out = np.empty(len(tokens), dtype=np.int64)
        for i, tok in enumerate(tokens):
            idx = self.index.get(tok, unk)
            if idx is None:
                raise KeyError(f"out-of-vocabulary token {tok!r} and no {UNK} entry")
            out[i] = idx
        return out

    def decode(self, indices):
        return [self.tokens[int(i)] for i in indices]


def tokenize(text, eos=True):
    """Whitespace tokens, one sentence per line, with an end-of-sentence marker per line."""
    tokens = []
    for line in text.splitlines():
        words = line.split()
        if words:
            tokens.extend(words)
            if eos:
                tokens.append(EOS)
    return tokens


def detokenize(tokens):
    lines, cur = [], []
    for tok in tokens:
        if tok == EOS:
            lines.append(" ".join(cur))
            cur = []
        else:
            cur.append(tok)
    if cur:
        lines.append(" ".join(cur))
    return "\n".join(lines)


def token_stream(text, vocab):
    """Vocabulary indices of ``text``; end-of-sentence markers only if the vocabulary has one."""
    return vocab.encode(tokenize(text, eos=EOS in vocab.index))


def markov_corpus(rng, vocab_size=50, n_tokens=10_000, branching=3, sentence_len=12):
    """Text from a random sparse first-order chain: each word has ``branching`` successors.

    Returns newline-separated sentences of space-separated ``w<i>`` tokens.
    """
    succ = np.stack([rng.choice(vocab_size, size=branching, replace=False) for _ in range(vocab_size)])
    probs = rng.dirichlet(np.ones(branching), size=vocab_size)
    words, lines, cur = 0, [], []
    tok = int(rng.integers(vocab_size))
    while words < n_tokens:
        cur.append(f"w{tok}")
        words += 1
        if len(cur) == sentence_len:
            lines.append(" ".join(cur))
            cur = []
        tok = int(succ[tok, rng.choice(branching, p=probs[tok])])
    if cur:
        lines.append(" ".join(cur))
    return "\n".join(lines) + "\n"


def repeat_corpus(rng, vocab_size=200, n_tokens=10_000, topic_size=4, doc_len=60, p_repeat=0.7):
    """Documents that keep re-using a few randomly chosen topic words.

    With probability ``p_repeat`` a token is drawn from the document's topic
    set, otherwise uniformly from the vocabulary, so recency is predictive
    while the identity of the topic words is not.
    """
    lines, words = [], 0
    while words < n_tokens:
        topic = rng.choice(vocab_size, size=topic_size, replace=False)
        doc = np.where(
            rng.random(doc_len) < p_repeat,
            rng.choice(topic, size=doc_len),
            rng.integers(vocab_size, size=doc_len),
        )
        lines.append(" ".join(f"w{t}" for t in doc))
        words += doc_len
    return "\n".join(lines) + "\n"
