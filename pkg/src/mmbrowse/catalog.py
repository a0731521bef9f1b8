"""Synthetic fashion catalog: vocabulary, product generation, deterministic
text/image encoders, attribute inverted index, and JSONL persistence.

The encoders stand in for a pretrained image CNN and word embeddings.
Every vocabulary token owns a fixed pseudo-random basis vector derived from
a hash of the token string, so encodings are reproducible with no model
weights while preserving the similarity structure the rest of the pipeline
relies on: products sharing attributes land near each other in feature
space, and the category signal dominates.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    InvalidQueryError,
    ParseError,
    ShapeError,
    UnknownTokenError,
)
from .numerics import STREAM_ENCODER, stream_rng

IMAGE_DIM = 4096
TEXT_DIM = 300

# How strongly category / gender membership weighs in the image encoding
# relative to ordinary attribute values.  Category must dominate clearly:
# nearest-neighbor retrieval and cluster exploration are meant to stay
# within the product type, the way penultimate-layer CNN features separate
# coarse object classes far more than styling details.
CATEGORY_BASIS_WEIGHT = 12.0
GENDER_BASIS_WEIGHT = 1.0
DEFAULT_SIGMA_IMG = 0.3

_CATEGORY_BASE = (
    "sandals", "sneakers", "boots", "loafers", "heels", "flats",
    "slippers", "oxfords", "moccasins", "clogs", "espadrilles", "brogues",
)
_VALUE_BASE = {
    "gender": ("men", "women"),
    "color": ("red", "blue", "green", "black", "white", "peach", "violet", "navy",
              "sky blue", "olive", "maroon", "beige"),
    "material": ("leather", "cotton", "jute", "silk", "suede", "canvas",
                 "rubber", "mesh", "denim", "velvet"),
    "pattern": ("floral", "checkered", "woven design", "embellished", "solid",
                "striped", "printed", "textured"),
    "brand": ("aralto", "brisca", "cordwain", "duneva", "elmore", "fairlane",
              "gatti", "harling", "istria", "junia"),
}
# Attributes every category carries; the rest apply to a per-category subset.
_UNIVERSAL_ATTRS = frozenset({"color", "brand"})

_PAPER_EXTRA_ATTRS = (
    ("occasion", 18), ("season", 18), ("heel", 18), ("sole", 18),
    ("fit", 18), ("closure", 18), ("style", 18),
    ("finish", 17), ("lining", 17), ("width", 17), ("strap", 17), ("trim", 17),
)


def _token_seed(token: str) -> int:
    """Stable 64-bit seed for a token string, identical across runs."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


_EMBED_CACHE: dict[str, np.ndarray] = {}
_BASIS_CACHE: dict[str, np.ndarray] = {}


def token_embedding(token: str) -> np.ndarray:
    """Unit-norm 300-d vector owned by this token (word-embedding stand-in)."""
    cached = _EMBED_CACHE.get(token)
    if cached is None:
        rng = stream_rng(_token_seed(token), 0)
        v = rng.standard_normal(TEXT_DIM)
        cached = v / np.linalg.norm(v)
        _EMBED_CACHE[token] = cached
    return cached


def token_basis(token: str) -> np.ndarray:
    """Unit-norm 4096-d image basis vector owned by this token."""
    cached = _BASIS_CACHE.get(token)
    if cached is None:
        rng = stream_rng(_token_seed(token), 1)
        v = rng.standard_normal(IMAGE_DIM)
        cached = v / np.linalg.norm(v)
        _BASIS_CACHE[token] = cached
    return cached


@dataclass(frozen=True)
class VocabConfig:
    """Size specification for a vocabulary.

    ``value_counts`` maps each non-category attribute to how many value
    tokens it carries; ``categories`` is the number of category tokens.
    """

    categories: int = 12
    value_counts: Mapping[str, int] = field(
        default_factory=lambda: {
            "gender": 2, "color": 8, "material": 6, "pattern": 4, "brand": 10,
        }
    )
    applicability_fraction: float = 0.6

    @classmethod
    def paper_scale(cls) -> "VocabConfig":
        """Full-scale configuration: 130 categories, 17 attribute types,
        501 attribute values (648 tokens in total)."""
        counts = {"gender": 2, "color": 46, "material": 65, "pattern": 17,
                  "brand": 160}
        counts.update(_PAPER_EXTRA_ATTRS)
        return cls(categories=130, value_counts=counts)


REQUIRED_ATTRIBUTES = ("gender", "category", "color", "material", "pattern", "brand")


@dataclass(frozen=True)
class Vocabulary:
    """Fashion vocabulary: attribute names, their value tokens, and which
    attributes apply to which category.

    ``attributes`` always contains at least gender, category, color,
    material, pattern and brand.  ``values["category"]`` holds the category
    tokens.  ``applicability`` maps a category to the product-attribute
    names (gender and category excluded) that are valid for it.
    """

    attributes: tuple[str, ...]
    values: dict[str, tuple[str, ...]]
    applicability: dict[str, frozenset[str]]

    def __post_init__(self):
        seen: set[str] = set()
        for attr in self.attributes:
            if attr != "category":
                seen.add(attr)
        for attr, toks in self.values.items():
            for t in toks:
                if t in seen:
                    raise ConfigError(f"duplicate token {t!r} in vocabulary")
                seen.add(t)
        for cat in self.values["category"]:
            if not self.applicability.get(cat):
                raise ConfigError(f"category {cat!r} has no applicable attribute")

    @property
    def categories(self) -> tuple[str, ...]:
        return self.values["category"]

    @property
    def genders(self) -> tuple[str, ...]:
        return self.values["gender"]

    def token_count(self) -> int:
        """Total distinct tokens: categories + attribute-type names
        (category itself excluded) + attribute values."""
        n = len(self.values["category"])
        for attr, toks in self.values.items():
            if attr == "category":
                continue
            n += 1 + len(toks)
        return n

    def all_tokens(self) -> set[str]:
        toks = set(self.values["category"])
        for attr, vals in self.values.items():
            if attr == "category":
                continue
            toks.add(attr)
            toks.update(vals)
        return toks

    def attribute_of(self, token: str) -> str | None:
        """Attribute a value token belongs to; None for attribute-name tokens."""
        return self._token_attr().get(token)

    def has_token(self, token: str) -> bool:
        return token in self._token_attr() or token in self.attributes

    def _token_attr(self) -> dict[str, str]:
        cached = getattr(self, "_token_attr_cache", None)
        if cached is None:
            cached = {}
            for attr, vals in self.values.items():
                for t in vals:
                    cached[t] = attr
            object.__setattr__(self, "_token_attr_cache", cached)
        return cached

    def to_json(self) -> dict:
        return {
            "attributes": list(self.attributes),
            "values": {a: list(v) for a, v in self.values.items()},
            "applicability": {c: sorted(s) for c, s in self.applicability.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        try:
            return cls(
                attributes=tuple(obj["attributes"]),
                values={a: tuple(v) for a, v in obj["values"].items()},
                applicability={c: frozenset(s) for c, s in obj["applicability"].items()},
            )
        except KeyError as exc:
            raise ParseError(f"vocabulary JSON missing key {exc}") from exc


def _named_tokens(attr: str, base: Sequence[str], count: int) -> tuple[str, ...]:
    toks = list(base[:count])
    i = len(toks)
    while len(toks) < count:
        i += 1
        toks.append(f"{attr}{i:03d}")
    return tuple(toks)


def build_vocabulary(config: VocabConfig, rng: np.random.Generator) -> Vocabulary:
    """Build a deterministic vocabulary for the given size spec.

    Category and value tokens come from curated fashion word lists,
    extended with numbered tokens when the requested counts exceed them.
    The rng drives only which optional attributes apply to which category.
    """
    if config.categories < 1:
        raise ConfigError("categories count must be >= 1")
    for attr, count in config.value_counts.items():
        if count < 1:
            raise ConfigError(f"attribute {attr!r} has zero-count value list")
    for attr in ("gender", "color", "material", "pattern", "brand"):
        if attr not in config.value_counts:
            raise ConfigError(f"required attribute {attr!r} missing from config")

    values: dict[str, tuple[str, ...]] = {
        "category": _named_tokens("category", _CATEGORY_BASE, config.categories)
    }
    attr_order = ["gender", "category"]
    for attr, count in config.value_counts.items():
        values[attr] = _named_tokens(attr, _VALUE_BASE.get(attr, ()), count)
        if attr != "gender":
            attr_order.append(attr)

    optional = [a for a in attr_order if a not in ("gender", "category")
                and a not in _UNIVERSAL_ATTRS]
    applicability: dict[str, frozenset[str]] = {}
    for cat in values["category"]:
        applicable = set(_UNIVERSAL_ATTRS)
        for attr in optional:
            if rng.random() < config.applicability_fraction:
                applicable.add(attr)
        applicability[cat] = frozenset(applicable)

    return Vocabulary(
        attributes=tuple(attr_order),
        values=values,
        applicability=applicability,
    )


@dataclass(frozen=True)
class Product:
    """One catalog item: id plus its attribute assignment."""

    id: str
    gender: str
    category: str
    attrs: dict[str, str]

    def pairs(self) -> list[tuple[str, str]]:
        """All (attribute, token) pairs including gender and category."""
        out = [("gender", self.gender), ("category", self.category)]
        out.extend(sorted(self.attrs.items()))
        return out


def generate_catalog(
    vocab: Vocabulary, n: int, rng: np.random.Generator
) -> list[Product]:
    """Sample ``n`` products with sequential ids P000001...

    Every applicable attribute of the sampled category receives a value,
    so encodings carry the full attribute signal.
    """
    if n < 1:
        raise ConfigError("catalog size must be >= 1")
    genders = vocab.values["gender"]
    cats = vocab.categories
    products = []
    for i in range(1, n + 1):
        gender = genders[rng.integers(len(genders))]
        category = cats[rng.integers(len(cats))]
        attrs = {}
        for attr in vocab.attributes:
            if attr in ("gender", "category"):
                continue
            if attr in vocab.applicability[category]:
                vals = vocab.values[attr]
                attrs[attr] = vals[rng.integers(len(vals))]
        products.append(Product(id=f"P{i:06d}", gender=gender,
                                category=category, attrs=attrs))
    return products


def encode_text(tokens: Sequence[str], vocab: Vocabulary) -> np.ndarray:
    """Bag-of-words text encoding: mean of the per-token 300-d embeddings."""
    if not tokens:
        raise InvalidQueryError("empty token list")
    unknown = [t for t in tokens if not vocab.has_token(t)]
    if unknown:
        raise UnknownTokenError(f"unknown tokens: {', '.join(sorted(set(unknown)))}")
    return np.mean([token_embedding(t) for t in tokens], axis=0)


def encode_image(
    product: Product,
    catalog_seed: int,
    sigma_img: float = DEFAULT_SIGMA_IMG,
) -> np.ndarray:
    """Deterministic 4096-d image-feature encoding of a product.

    Sum of the basis vectors of the product's (attribute, token) pairs,
    category weighted up, plus per-product Gaussian noise of norm-scale
    ``sigma_img`` seeded by (catalog seed, product id).  sigma_img = 0
    yields identical vectors for identically-attributed products.
    """
    vec = CATEGORY_BASIS_WEIGHT * token_basis(product.category)
    vec = vec + GENDER_BASIS_WEIGHT * token_basis(product.gender)
    for _, tok in sorted(product.attrs.items()):
        vec = vec + token_basis(tok)
    if sigma_img > 0.0:
        rng = stream_rng(catalog_seed, STREAM_ENCODER, _token_seed(product.id))
        vec = vec + rng.standard_normal(IMAGE_DIM) * (sigma_img / np.sqrt(IMAGE_DIM))
    return vec


def product_text_tokens(product: Product) -> list[str]:
    """Tokens forming a product's text description: gender, category and,
    when present, color — the most representative attributes."""
    toks = [product.gender, product.category]
    if "color" in product.attrs:
        toks.append(product.attrs["color"])
    return toks


@dataclass(frozen=True)
class EncodedProduct:
    """Image (4096-d) and text (300-d) encodings of one product."""

    product_id: str
    image: np.ndarray
    text: np.ndarray

    def __post_init__(self):
        if self.image.shape != (IMAGE_DIM,):
            raise ShapeError(f"image features must be ({IMAGE_DIM},)")
        if self.text.shape != (TEXT_DIM,):
            raise ShapeError(f"text features must be ({TEXT_DIM},)")


def encode_product(
    product: Product,
    vocab: Vocabulary,
    catalog_seed: int,
    sigma_img: float = DEFAULT_SIGMA_IMG,
) -> EncodedProduct:
    return EncodedProduct(
        product_id=product.id,
        image=encode_image(product, catalog_seed, sigma_img),
        text=encode_text(product_text_tokens(product), vocab),
    )


class EncodedCatalog:
    """Row-aligned encodings of a product list."""

    def __init__(self, ids: Sequence[str], image: np.ndarray, text: np.ndarray):
        self.ids = list(ids)
        self.image = np.asarray(image, dtype=np.float64)
        self.text = np.asarray(text, dtype=np.float64)
        if self.image.shape[0] != len(self.ids) or self.text.shape[0] != len(self.ids):
            raise ShapeError("feature row count does not match id count")
        self._row = {pid: i for i, pid in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, product_id: str) -> int:
        try:
            return self._row[product_id]
        except KeyError:
            raise DataError(f"product {product_id!r} not in encoded catalog") from None

    @classmethod
    def from_products(
        cls,
        products: Sequence[Product],
        vocab: Vocabulary,
        catalog_seed: int,
        sigma_img: float = DEFAULT_SIGMA_IMG,
    ) -> "EncodedCatalog":
        encoded = [encode_product(p, vocab, catalog_seed, sigma_img) for p in products]
        return cls(
            ids=[e.product_id for e in encoded],
            image=np.stack([e.image for e in encoded]) if encoded else np.zeros((0, IMAGE_DIM)),
            text=np.stack([e.text for e in encoded]) if encoded else np.zeros((0, TEXT_DIM)),
        )


@dataclass(frozen=True)
class FeatureStats:
    """Per-dimension z-score statistics of an encoded catalog.

    Both encoder outputs are standardized with these before any joint
    embedding use; the two views otherwise live on unrelated scales.
    """

    image_mean: np.ndarray
    image_std: np.ndarray
    text_mean: np.ndarray
    text_std: np.ndarray

    @classmethod
    def fit(cls, encoded: EncodedCatalog) -> "FeatureStats":
        if len(encoded) < 2:
            raise DataError("need at least 2 products to fit feature statistics")
        return cls(
            image_mean=encoded.image.mean(axis=0),
            image_std=np.maximum(encoded.image.std(axis=0), 1e-8),
            text_mean=encoded.text.mean(axis=0),
            text_std=np.maximum(encoded.text.std(axis=0), 1e-8),
        )

    def standardize_image(self, v: np.ndarray) -> np.ndarray:
        return (v - self.image_mean) / self.image_std

    def standardize_text(self, v: np.ndarray) -> np.ndarray:
        return (v - self.text_mean) / self.text_std


class AttributeIndex:
    """In-memory inverted index: (attribute, token) -> sorted product ids."""

    def __init__(self, postings: dict[tuple[str, str], list[str]]):
        self.postings = postings

    @classmethod
    def build(cls, products: Iterable[Product]) -> "AttributeIndex":
        postings: dict[tuple[str, str], list[str]] = {}
        for p in products:
            for pair in p.pairs():
                postings.setdefault(pair, []).append(p.id)
        for ids in postings.values():
            ids.sort()
        return cls(postings)

    def lookup(self, attribute: str, token: str) -> list[str]:
        return self.postings.get((attribute, token), [])


def search(
    index: AttributeIndex, constraints: Mapping[str, str], limit: int
) -> list[str]:
    """Products ranked by (satisfied-constraint count desc, id asc).

    Only products matching at least one constraint appear; ties always
    break on id so results are deterministic.
    """
    if not constraints:
        raise InvalidQueryError("empty constraint set")
    if limit < 1:
        raise ConfigError("search limit must be >= 1")
    counts: dict[str, int] = {}
    for attr, token in constraints.items():
        for pid in index.lookup(attr, token):
            counts[pid] = counts.get(pid, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [pid for pid, _ in ranked[:limit]]


def save_catalog(products: Sequence[Product], path) -> None:
    """Write one product per line: {"id", "gender", "category", "attrs"}."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in products:
            fh.write(json.dumps(
                {"id": p.id, "gender": p.gender, "category": p.category,
                 "attrs": p.attrs},
                sort_keys=True,
            ))
            fh.write("\n")


def load_catalog(path, vocab: Vocabulary) -> list[Product]:
    """Read and validate a product JSONL file.

    Any malformed line or token outside the vocabulary raises ParseError
    with the offending line number; an empty file yields an empty catalog
    with a warning.
    """
    products: list[Product] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            try:
                pid = obj["id"]
                gender = obj["gender"]
                category = obj["category"]
                attrs = obj["attrs"]
            except (KeyError, TypeError) as exc:
                raise ParseError("product object missing required keys", line=lineno) from exc
            if gender not in vocab.values["gender"]:
                raise ParseError(f"unknown gender {gender!r}", line=lineno)
            if category not in vocab.categories:
                raise ParseError(f"unknown category {category!r}", line=lineno)
            for attr, token in attrs.items():
                if attr not in vocab.values or attr in ("gender", "category"):
                    raise ParseError(f"unknown attribute {attr!r}", line=lineno)
                if token not in vocab.values[attr]:
                    raise ParseError(
                        f"value {token!r} not in vocabulary under attribute {attr!r}",
                        line=lineno,
                    )
                if attr not in vocab.applicability[category]:
                    raise ParseError(
                        f"attribute {attr!r} not applicable to category {category!r}",
                        line=lineno,
                    )
            products.append(Product(id=pid, gender=gender, category=category,
                                    attrs=dict(attrs)))
    if not products:
        warnings.warn(f"catalog file {path} is empty", RuntimeWarning, stacklevel=2)
    return products


FEATURES_MAGIC = b"MMDENC1"


def save_features(encoded: EncodedCatalog, path) -> None:
    """Binary feature dump: magic header, then one record per product — a
    length-prefixed id followed by 4096 + 300 little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(FEATURES_MAGIC)
        for i, pid in enumerate(encoded.ids):
            raw = pid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(encoded.image[i].astype("<f8").tobytes())
            fh.write(encoded.text[i].astype("<f8").tobytes())


def load_features(path) -> EncodedCatalog:
    record = IMAGE_DIM * 8 + TEXT_DIM * 8
    ids: list[str] = []
    rows: list[np.ndarray] = []
    with open(path, "rb") as fh:
        magic = fh.read(len(FEATURES_MAGIC))
        if magic != FEATURES_MAGIC:
            raise ParseError(f"bad features file header {magic!r}")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) < 4:
                raise ParseError("truncated features record")
            (idlen,) = struct.unpack("<I", head)
            ids.append(fh.read(idlen).decode("utf-8"))
            payload = fh.read(record)
            if len(payload) < record:
                raise ParseError(f"truncated features for product {ids[-1]!r}")
            rows.append(np.frombuffer(payload, dtype="<f8"))
    if rows:
        data = np.stack(rows)
        image, text = data[:, :IMAGE_DIM], data[:, IMAGE_DIM:]
    else:
        image = np.zeros((0, IMAGE_DIM))
        text = np.zeros((0, TEXT_DIM))
    return EncodedCatalog(ids, image, text)


def save_vocabulary(vocab: Vocabulary, path, extra: Mapping | None = None) -> None:
    doc = {"vocab": vocab.to_json()}
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_vocabulary(path) -> tuple[Vocabulary, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    vocab = Vocabulary.from_json(doc["vocab"])
    meta = {k: v for k, v in doc.items() if k != "vocab"}
    return vocab, meta
