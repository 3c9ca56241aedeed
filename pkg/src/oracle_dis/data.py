"""Embedding corpora: OEMB files, splits, batches, planted data, code-switching."""

from __future__ import annotations

import json
import struct
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

OEMB_MAGIC = b"OEMB"
OEMB_VERSION = 1
FLAG_GOLD = 0x0001
_HEADER = struct.Struct("<4sHHIIHH")
# refuse headers declaring more than this many float32 values
MAX_ENTRIES = 1 << 31

# Language ids and ISO codes of the training languages, English first.
DEFAULT_LANGUAGES = ("en", "de", "pt", "it", "es", "fr", "zh", "ar", "ja", "nl", "ro", "gn", "ay")


class CorpusFormatError(ValueError):
    """A malformed OEMB file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BadMagicError(CorpusFormatError):
    pass


class TruncatedFileError(CorpusFormatError):
    pass


class NonFiniteEntryError(CorpusFormatError):
    pass


class SizeOverflowError(CorpusFormatError):
    pass


class SplitError(ValueError):
    pass


# -- language registry ------------------------------------------------------

@dataclass(frozen=True)
class LanguageId:
    id: int
    iso: str


class LanguageRegistry:
    def __init__(self, languages: Iterable[LanguageId]):
        self._by_id: dict[int, LanguageId] = {}
        self._by_iso: dict[str, LanguageId] = {}
        for lang in languages:
            if lang.id in self._by_id:
                raise ValueError(f"duplicate language id {lang.id}")
            if lang.iso in self._by_iso:
                raise ValueError(f"duplicate ISO code {lang.iso!r}")
            if not (0 <= lang.id < 1 << 16):
                raise ValueError(f"language id {lang.id} does not fit in u16")
            self._by_id[lang.id] = lang
            self._by_iso[lang.iso] = lang

    @classmethod
    def default(cls) -> "LanguageRegistry":
        return cls(LanguageId(i, iso) for i, iso in enumerate(DEFAULT_LANGUAGES))

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self):
        return iter(sorted(self._by_id.values(), key=lambda l: l.id))

    def iso(self, lang_id: int) -> str:
        return self._by_id[lang_id].iso if lang_id in self._by_id else f"#{lang_id}"

    def id_of(self, iso: str) -> int:
        try:
            return self._by_iso[iso].id
        except KeyError:
            raise KeyError(f"unknown language code {iso!r}") from None

    def save(self, path) -> None:
        doc = {"languages": [{"id": l.id, "iso": l.iso} for l in self]}
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "LanguageRegistry":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(LanguageId(int(e["id"]), str(e["iso"])) for e in doc["languages"])


# -- corpora ----------------------------------------------------------------

@dataclass(frozen=True)
class EmbeddingCorpus:
    """Index-aligned source/target embeddings for one language pair.

    Values are float64 in memory; files store float32.
    """

    src_lang: int
    tgt_lang: int
    src: np.ndarray
    tgt: np.ndarray
    gold_scores: np.ndarray | None = None

    def __post_init__(self):
        src = np.array(self.src, dtype=np.float64, copy=True)
        tgt = np.array(self.tgt, dtype=np.float64, copy=True)
        if src.ndim != 2 or src.shape != tgt.shape:
            raise ValueError(f"source {src.shape} and target {tgt.shape} must be matching N×d matrices")
        if not (np.all(np.isfinite(src)) and np.all(np.isfinite(tgt))):
            raise ValueError("corpus contains non-finite entries")
        src.setflags(write=False)
        tgt.setflags(write=False)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "tgt", tgt)
        if self.gold_scores is not None:
            gold = np.array(self.gold_scores, dtype=np.float64, copy=True)
            if gold.shape != (src.shape[0],):
                raise ValueError(f"gold_scores has shape {gold.shape}, expected ({src.shape[0]},)")
            if not np.all(np.isfinite(gold)):
                raise ValueError("gold_scores contain non-finite entries")
            gold.setflags(write=False)
            object.__setattr__(self, "gold_scores", gold)

    @property
    def n(self) -> int:
        return self.src.shape[0]

    @property
    def d(self) -> int:
        return self.src.shape[1]

    def subset(self, idx) -> "EmbeddingCorpus":
        idx = np.asarray(idx, dtype=np.int64)
        gold = None if self.gold_scores is None else self.gold_scores[idx]
        return EmbeddingCorpus(self.src_lang, self.tgt_lang, self.src[idx], self.tgt[idx], gold)


def save_corpus(corpus: EmbeddingCorpus, path) -> None:
    flags = FLAG_GOLD if corpus.gold_scores is not None else 0
    header = _HEADER.pack(OEMB_MAGIC, OEMB_VERSION, flags, corpus.d, corpus.n, corpus.src_lang, corpus.tgt_lang)
    rows = np.concatenate([corpus.src, corpus.tgt], axis=1).astype("<f4")
    parts = [header, rows.tobytes()]
    if corpus.gold_scores is not None:
        parts.append(corpus.gold_scores.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def parse_corpus(raw: bytes) -> EmbeddingCorpus:
    if len(raw) < 4 or raw[:4] != OEMB_MAGIC:
        raise BadMagicError(f"bad magic {raw[:4]!r}, expected {OEMB_MAGIC!r}", 0)
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"header needs {_HEADER.size} bytes, file has {len(raw)}", len(raw))
    _, version, flags, dim, count, src_lang, tgt_lang = _HEADER.unpack_from(raw, 0)
    if version != OEMB_VERSION:
        raise CorpusFormatError(f"unsupported version {version}", 4)
    if flags & ~FLAG_GOLD:
        raise CorpusFormatError(f"unknown flag bits 0x{flags:04x}", 6)
    n_values = 2 * count * dim + (count if flags & FLAG_GOLD else 0)
    if n_values > MAX_ENTRIES:
        raise SizeOverflowError(f"count {count} × dim {dim} exceeds {MAX_ENTRIES} entries", 8)
    if count > 0 and dim == 0:
        raise SizeOverflowError("dim 0 with nonzero count", 8)
    expected = _HEADER.size + 4 * n_values
    if len(raw) < expected:
        raise TruncatedFileError(f"file has {len(raw)} bytes, header declares {expected}", len(raw))
    if len(raw) > expected:
        raise CorpusFormatError(f"{len(raw) - expected} trailing bytes after declared data", expected)
    values = np.frombuffer(raw, dtype="<f4", count=n_values, offset=_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NonFiniteEntryError("non-finite entry", _HEADER.size + 4 * int(bad[0]))
    rows = values[: 2 * count * dim].reshape(count, 2 * dim).astype(np.float64)
    gold = values[2 * count * dim:].astype(np.float64) if flags & FLAG_GOLD else None
    return EmbeddingCorpus(src_lang, tgt_lang, rows[:, :dim], rows[:, dim:], gold)


def load_corpus(path) -> EmbeddingCorpus:
    return parse_corpus(Path(path).read_bytes())


def split_corpus(corpus: EmbeddingCorpus, fractions: Sequence[float], seed: int):
    """Seeded permutation, then contiguous train/val/test slices."""
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise SplitError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    n = corpus.n
    n_train = int(round(fr[0] * n))
    n_val = min(int(round(fr[1] * n)), n - n_train)
    sizes = (n_train, n_val, n - n_train - n_val)
    for name, f, size in zip(("train", "val", "test"), fr, sizes):
        if f > 0 and size == 0:
            raise SplitError(f"{name} split is empty for fraction {f} with N={n}")
    perm = np.random.default_rng(seed).permutation(n)
    cuts = np.cumsum(sizes)[:-1]
    return tuple(corpus.subset(idx) for idx in np.split(perm, cuts))


def batch_iter(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Index batches for one epoch; a trailing batch smaller than 2 is dropped."""
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    batches = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if batches and len(batches[-1]) < 2:
        batches.pop()
    return batches


# -- planted synthetic data -------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    n_pairs: int = 2000
    d: int = 16
    semantic_dim: int = 8
    language_offset_scale: float = 4.0
    noise_sigma: float = 0.05
    seed: int = 0
    mixing: str = "random"
    src_lang: int = 0
    tgt_lang: int = 1
    sts: bool = False

    def __post_init__(self):
        if self.semantic_dim < 1:
            raise ValueError("semantic_dim must be >= 1")
        if self.semantic_dim > self.d:
            raise ValueError(f"semantic_dim {self.semantic_dim} exceeds d {self.d}")
        if self.noise_sigma < 0 or self.language_offset_scale < 0:
            raise ValueError("noise_sigma and language_offset_scale must be >= 0")
        if self.mixing not in ("random", "identity"):
            raise ValueError(f"mixing must be 'random' or 'identity', got {self.mixing!r}")
        if self.language_offset_scale > 0 and self.semantic_dim == self.d:
            raise ValueError("a language offset needs d > semantic_dim")
        if self.n_pairs < 0:
            raise ValueError("n_pairs must be >= 0")


def _random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    if n == 0:
        return np.zeros((0, 0))
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def language_map(spec: SyntheticSpec, lang: int) -> tuple[np.ndarray, np.ndarray]:
    """The orthogonal map and offset vector of one language."""
    d, k = spec.d, spec.semantic_dim
    if spec.mixing == "identity":
        Q = np.eye(d)
        u = np.zeros(d)
        if d > k:
            u[k + lang % (d - k)] = 1.0
        return Q, spec.language_offset_scale * u
    base = _random_orthogonal(np.random.default_rng([spec.seed, 0x5E]), d)
    rot = np.eye(d)
    rot[k:, k:] = _random_orthogonal(np.random.default_rng([spec.seed, 0x1A, lang]), d - k)
    Q = base @ rot
    u = np.zeros(d)
    if d > k:
        u[k] = 1.0
    return Q, spec.language_offset_scale * (Q @ u)


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> EmbeddingCorpus:
    """Planted corpus: shared semantic latents plus a per-language offset.

    Each language maps [m; 0] through its orthogonal map; all maps agree on
    the semantic block and differ on the complement, where the offset lives.
    Latents are Gaussian directions scaled to norm sqrt(k). In STS mode the
    target latent is a blend at a per-pair similarity, and gold = 5 × that
    similarity. Values are rounded to float32 so files round-trip exactly.
    """
    n, d, k = spec.n_pairs, spec.d, spec.semantic_dim
    rng = np.random.default_rng([spec.seed, 0xDA7A])
    m = rng.standard_normal((n, k))
    m *= np.sqrt(k) / np.maximum(np.linalg.norm(m, axis=1, keepdims=True), 1e-300)
    gold = None
    m_t = m
    if spec.sts:
        sim = rng.uniform(0.0, 1.0, size=n)
        z = rng.standard_normal((n, k))
        z -= np.sum(z * m, axis=1, keepdims=True) / k * m
        z *= np.sqrt(k) / np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-300)
        m_t = sim[:, None] * m + np.sqrt(1.0 - sim**2)[:, None] * z
        gold = 5.0 * sim

    def side(latent: np.ndarray, lang: int) -> np.ndarray:
        Q, b = language_map(spec, lang)
        full = np.zeros((n, d))
        full[:, :k] = latent
        return full @ Q.T + b + spec.noise_sigma * rng.standard_normal((n, d))

    src = side(m, spec.src_lang)
    tgt = side(m_t, spec.tgt_lang)
    f32 = lambda a: None if a is None else a.astype(np.float32).astype(np.float64)
    return EmbeddingCorpus(spec.src_lang, spec.tgt_lang, f32(src), f32(tgt), f32(gold))


# -- code-switching ---------------------------------------------------------

def normalize_word(word: str) -> str:
    return unicodedata.normalize("NFC", word)


def tokenize(sentence: str) -> list[str]:
    return [normalize_word(t) for t in sentence.split()]


@dataclass
class BilingualDictionary:
    entries: dict[str, list[str]] = field(default_factory=dict)
    skipped_lines: int = 0

    def add(self, source: str, target: str) -> None:
        source, target = normalize_word(source), normalize_word(target)
        if not source.strip() or not target.strip():
            raise ValueError("dictionary words must be non-empty")
        options = self.entries.setdefault(source, [])
        if target not in options:
            options.append(target)

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def translations(self, word: str) -> list[str]:
        return self.entries.get(word, [])

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "BilingualDictionary":
        """Whitespace-separated lines: source word, then its translation."""
        out = cls()
        for line in lines:
            parts = line.split()
            if len(parts) < 2:
                if line.strip():
                    out.skipped_lines += 1
                continue
            out.add(parts[0], " ".join(parts[1:]))
        return out

    @classmethod
    def load(cls, path) -> "BilingualDictionary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh)


@dataclass
class CodeSwitchRecord:
    original: list[str]
    switched: list[str]
    replaced_positions: list[int]


@dataclass
class CodeSwitchResult:
    records: list[CodeSwitchRecord]
    excluded: int
    excluded_indices: list[int]
    forced: int
    rate: float
    seed: int

    def report(self) -> dict:
        n_repl = sum(len(r.replaced_positions) for r in self.records)
        n_tokens = sum(len(r.original) for r in self.records)
        return {
            "rate": self.rate,
            "seed": self.seed,
            "sentences_in": len(self.records) + self.excluded,
            "sentences_emitted": len(self.records),
            "sentences_excluded": self.excluded,
            "excluded_indices": self.excluded_indices,
            "replacements_total": n_repl,
            "replacements_forced": self.forced,
            "replacements_per_sentence": n_repl / len(self.records) if self.records else 0.0,
            "replaced_token_fraction": n_repl / n_tokens if n_tokens else 0.0,
        }


def build_codeswitch(sentences: Sequence[Sequence[str]], dictionary: BilingualDictionary,
                     rate: float, seed: int) -> CodeSwitchResult:
    """Replace dictionary-covered tokens with seeded random translations.

    Every covered token is switched independently with probability ``rate``;
    a sentence left unswitched gets its first covered token switched, and a
    sentence with no covered token is excluded.
    """
    if not (0.0 < rate <= 1.0):
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    if len(dictionary) == 0:
        raise ValueError("dictionary is empty")
    rng = np.random.default_rng(seed)
    records, excluded_idx = [], []
    forced = 0
    for idx, sent in enumerate(sentences):
        tokens = [normalize_word(t) for t in sent]
        covered = [i for i, t in enumerate(tokens) if t in dictionary]
        if not covered:
            excluded_idx.append(idx)
            continue
        switched = list(tokens)
        positions = []
        for i in covered:
            if rng.random() < rate:
                options = dictionary.translations(tokens[i])
                switched[i] = options[int(rng.integers(len(options)))]
                positions.append(i)
        if not positions:
            i = covered[0]
            options = dictionary.translations(tokens[i])
            switched[i] = options[int(rng.integers(len(options)))]
            positions.append(i)
            forced += 1
        records.append(CodeSwitchRecord(tokens, switched, positions))
    return CodeSwitchResult(records, len(excluded_idx), excluded_idx, forced, rate, seed)


def write_codeswitch(result: CodeSwitchResult, out_path, report_path=None) -> None:
    text = "".join(" ".join(r.switched) + "\n" for r in result.records)
    Path(out_path).write_text(text, encoding="utf-8")
    if report_path is not None:
        Path(report_path).write_text(json.dumps(result.report(), indent=2) + "\n", encoding="utf-8")
