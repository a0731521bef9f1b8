"""Dialog simulation: a context-dependent probabilistic finite state
automaton generates multi-modal sessions over the catalog, and the same
responder functions back the rule-based mode of the live service.

Text rounds retrieve by attribute search.  Click rounds mix exploitation
and exploration: n1 nearest neighbors of the clicked product's image
features plus 6 - n1 products sampled from the clicked product's cluster,
where the dendrogram is cut at a multiple of the largest KNN distance.  n1
grows with the round index, so sessions focus in over time.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .catalog import AttributeIndex, EncodedCatalog, Product, Vocabulary, search
from .errors import (
    ConfigError,
    DataError,
    InvalidInputError,
    InvalidQueryError,
    MMBrowseError,
    ParseError,
    ProtocolError,
)
from .numerics import STREAM_SIMULATOR, stream_rng

N_DISPLAY = 6

NODE_START = "start"
NODE_GENDER = "gender"
NODE_CATEGORY = "category"
NODE_GENDER_CATEGORY = "gender_category"
NODE_ATTRIBUTE = "attribute"
NODE_IMAGE_CLICK = "image_click"
NODE_END = "end"

TEXT_NODES = (NODE_GENDER, NODE_CATEGORY, NODE_GENDER_CATEGORY, NODE_ATTRIBUTE)
ALL_NODES = (NODE_START,) + TEXT_NODES + (NODE_IMAGE_CLICK, NODE_END)


@dataclass
class DialogContext:
    """Running dialog state: gender, category, and attribute constraints.

    Constraints never mention attributes inapplicable to the current
    category; stale ones are dropped whenever the category changes.
    """

    gender: str | None = None
    category: str | None = None
    constraints: dict[str, str] = field(default_factory=dict)

    def set_category(self, category: str, vocab: Vocabulary) -> None:
        if category != self.category:
            applicable = vocab.applicability[category]
            self.constraints = {a: t for a, t in self.constraints.items()
                                if a in applicable}
            self.category = category

    def apply_token(self, token: str, vocab: Vocabulary) -> None:
        """Fold one vocabulary token into the context (service text path)."""
        attr = vocab.attribute_of(token)
        if attr is None:
            return  # attribute-name token: no constraint carried
        if attr == "gender":
            self.gender = token
        elif attr == "category":
            self.set_category(token, vocab)
        else:
            if self.category is None or attr in vocab.applicability[self.category]:
                self.constraints[attr] = token

    def merged_constraints(self) -> dict[str, str]:
        out = dict(self.constraints)
        if self.gender is not None:
            out["gender"] = self.gender
        if self.category is not None:
            out["category"] = self.category
        return out

    def snapshot(self) -> dict:
        return {"gender": self.gender, "category": self.category,
                "constraints": dict(self.constraints)}

    def copy(self) -> "DialogContext":
        return DialogContext(self.gender, self.category, dict(self.constraints))


@dataclass(frozen=True)
class QueryEvent:
    """One user turn: either text tokens or a click on a displayed product."""

    kind: str  # "text" | "image_click"
    round_index: int
    tokens: tuple[str, ...] = ()
    clicked_product_id: str | None = None

    def __post_init__(self):
        if self.kind == "text":
            if not self.tokens or self.clicked_product_id is not None:
                raise InvalidInputError("text event must carry tokens only")
        elif self.kind == "image_click":
            if self.clicked_product_id is None or self.tokens:
                raise InvalidInputError("click event must carry a product id only")
        else:
            raise InvalidInputError(f"unknown event kind {self.kind!r}")

    def to_json(self) -> dict:
        obj: dict = {"kind": self.kind, "round": self.round_index}
        if self.kind == "text":
            obj["tokens"] = list(self.tokens)
        else:
            obj["clicked_product_id"] = self.clicked_product_id
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "QueryEvent":
        return cls(
            kind=obj["kind"],
            round_index=obj["round"],
            tokens=tuple(obj.get("tokens", ())),
            clicked_product_id=obj.get("clicked_product_id"),
        )


@dataclass(frozen=True)
class DialogRound:
    query: QueryEvent
    displayed: tuple[str, ...]
    context: dict
    n1: int | None = None

    def to_json(self) -> dict:
        return {"query": self.query.to_json(), "displayed": list(self.displayed),
                "context": self.context, "n1": self.n1}

    @classmethod
    def from_json(cls, obj: dict) -> "DialogRound":
        return cls(
            query=QueryEvent.from_json(obj["query"]),
            displayed=tuple(obj["displayed"]),
            context=obj["context"],
            n1=obj.get("n1"),
        )


@dataclass(frozen=True)
class DialogSession:
    session_id: str
    rounds: tuple[DialogRound, ...]

    def to_json(self) -> dict:
        return {"session_id": self.session_id,
                "rounds": [r.to_json() for r in self.rounds]}

    @classmethod
    def from_json(cls, obj: dict) -> "DialogSession":
        return cls(session_id=obj["session_id"],
                   rounds=tuple(DialogRound.from_json(r) for r in obj["rounds"]))


_DEFAULT_TRANSITIONS = {
    NODE_START: {NODE_GENDER: 0.2, NODE_CATEGORY: 0.5, NODE_GENDER_CATEGORY: 0.3},
    NODE_GENDER: {NODE_ATTRIBUTE: 0.4, NODE_IMAGE_CLICK: 0.4, NODE_GENDER_CATEGORY: 0.2},
    NODE_CATEGORY: {NODE_ATTRIBUTE: 0.4, NODE_IMAGE_CLICK: 0.4, NODE_GENDER_CATEGORY: 0.2},
    NODE_GENDER_CATEGORY: {NODE_ATTRIBUTE: 0.4, NODE_IMAGE_CLICK: 0.4, NODE_GENDER_CATEGORY: 0.2},
    NODE_ATTRIBUTE: {NODE_ATTRIBUTE: 0.3, NODE_IMAGE_CLICK: 0.45, NODE_END: 0.25},
    NODE_IMAGE_CLICK: {NODE_ATTRIBUTE: 0.3, NODE_IMAGE_CLICK: 0.45, NODE_END: 0.25},
}


@dataclass(frozen=True)
class FsaConfig:
    """Transition table and knobs of the dialog automaton."""

    transitions: dict[str, dict[str, float]] = field(
        default_factory=lambda: {n: dict(row) for n, row in _DEFAULT_TRANSITIONS.items()}
    )
    p_context_switch: float = 0.1
    max_rounds: int = 12
    n1_offset: int = 1
    cluster_multiplier_range: tuple[float, float] = (2.0, 5.0)

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        if not 0.0 <= self.p_context_switch <= 1.0:
            raise ConfigError("p_context_switch must be a probability")
        lo, hi = self.cluster_multiplier_range
        if not 0.0 < lo <= hi:
            raise ConfigError("cluster multiplier range must satisfy 0 < lo <= hi")
        for node, row in self.transitions.items():
            if node not in ALL_NODES or node == NODE_END:
                raise ConfigError(f"transitions from unknown node {node!r}")
            for target in row:
                if target not in ALL_NODES or target == NODE_START:
                    raise ConfigError(f"transition into invalid node {target!r}")
            total = sum(row.values())
            if abs(total - 1.0) > 1e-9:
                raise ConfigError(
                    f"outgoing probabilities from {node!r} sum to {total}, not 1"
                )
        start_row = self.transitions.get(NODE_START, {})
        for target in start_row:
            if target not in (NODE_GENDER, NODE_CATEGORY, NODE_GENDER_CATEGORY):
                raise ConfigError("the first query of a session must be text")

    @property
    def p_end(self) -> float:
        return self.transitions[NODE_ATTRIBUTE].get(NODE_END, 0.0)

    @classmethod
    def default(cls, p_end: float = 0.25, **kwargs) -> "FsaConfig":
        """The default table with a custom end probability; the remaining
        mass from attribute/image-click splits 0.4 : 0.6."""
        trans = {n: dict(row) for n, row in _DEFAULT_TRANSITIONS.items()}
        rest = 1.0 - p_end
        for node in (NODE_ATTRIBUTE, NODE_IMAGE_CLICK):
            trans[node] = {NODE_ATTRIBUTE: 0.4 * rest,
                           NODE_IMAGE_CLICK: 0.6 * rest,
                           NODE_END: p_end}
        return cls(transitions=trans, **kwargs)

    def to_json(self) -> dict:
        return {
            "transitions": {n: dict(row) for n, row in self.transitions.items()},
            "p_context_switch": self.p_context_switch,
            "max_rounds": self.max_rounds,
            "n1_offset": self.n1_offset,
            "cluster_multiplier_range": list(self.cluster_multiplier_range),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FsaConfig":
        return cls(
            transitions={n: dict(row) for n, row in obj["transitions"].items()},
            p_context_switch=obj.get("p_context_switch", 0.1),
            max_rounds=obj.get("max_rounds", 12),
            n1_offset=obj.get("n1_offset", 1),
            cluster_multiplier_range=tuple(obj.get("cluster_multiplier_range", (2.0, 5.0))),
        )

    @classmethod
    def load(cls, path) -> "FsaConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                return cls.from_json(json.load(fh))
            except (KeyError, TypeError) as exc:
                raise ParseError(f"bad FSA config: {exc}") from exc


def step_fsa(
    node: str,
    context: DialogContext,
    config: FsaConfig,
    rng: np.random.Generator,
    has_display: bool = True,
) -> str:
    """Sample the next automaton node.

    Context dependence: while no category is known, transitions into the
    attribute node are redirected toward acquiring one — to the category
    query node or, when something is on screen, the image-click node.
    """
    if node == NODE_END or node not in ALL_NODES:
        raise InvalidInputError(f"cannot step from node {node!r}")
    row = config.transitions.get(node)
    if not row:
        raise ConfigError(f"no transitions configured for node {node!r}")
    targets = sorted(row)
    probs = np.array([row[t] for t in targets])
    nxt = targets[int(rng.choice(len(targets), p=probs / probs.sum()))]
    if nxt == NODE_ATTRIBUTE and context.category is None:
        if has_display and rng.random() < 0.5:
            nxt = NODE_IMAGE_CLICK
        else:
            nxt = NODE_CATEGORY
    if nxt == NODE_IMAGE_CLICK and not has_display:
        nxt = NODE_CATEGORY
    return nxt


def _pick(rng: np.random.Generator, seq: Sequence[str]) -> str:
    return seq[int(rng.integers(len(seq)))]


def _switch_context(
    context: DialogContext, vocab: Vocabulary, rng: np.random.Generator
) -> tuple[str, ...]:
    """Context switch: gender and category reset to freshly sampled values."""
    gender = _pick(rng, vocab.genders)
    others = [c for c in vocab.categories if c != context.category]
    category = _pick(rng, others) if others else context.category
    context.gender = gender
    context.set_category(category, vocab)
    return (gender, category)


def gen_text_query(
    node: str,
    context: DialogContext,
    vocab: Vocabulary,
    rng: np.random.Generator,
    p_context_switch: float = 0.0,
) -> QueryEvent:
    """Generate the text query for a text node and fold it into the context.

    The caller owns the round index; it is patched in afterwards.  At the
    attribute node the user may instead switch context with probability
    ``p_context_switch``, resetting gender and category to new values.
    """
    if node == NODE_GENDER:
        tokens = (_pick(rng, vocab.genders),)
        context.gender = tokens[0]
    elif node == NODE_CATEGORY:
        category = _pick(rng, vocab.categories)
        tokens = (category,)
        context.set_category(category, vocab)
    elif node == NODE_GENDER_CATEGORY:
        tokens = _switch_context(context, vocab, rng)
    elif node == NODE_ATTRIBUTE:
        if context.category is None:
            raise MMBrowseError("attribute query without a category in context")
        if context.category is not None and rng.random() < p_context_switch:
            tokens = _switch_context(context, vocab, rng)
        else:
            applicable = sorted(vocab.applicability[context.category])
            if not applicable:
                raise MMBrowseError(
                    f"category {context.category!r} has no applicable attributes"
                )
            attr = _pick(rng, applicable)
            value = _pick(rng, vocab.values[attr])
            context.constraints[attr] = value
            tokens = (value,)
    else:
        raise InvalidInputError(f"{node!r} is not a text-query node")
    return QueryEvent(kind="text", round_index=0, tokens=tokens)


def pad_displayed(
    ids: Sequence[str], all_ids: Sequence[str], n: int = N_DISPLAY
) -> tuple[str, ...]:
    """Pad a result list to ``n`` distinct ids with the lowest unused ids."""
    out = list(ids[:n])
    if len(out) < n:
        present = set(out)
        for pid in sorted(all_ids):
            if pid not in present:
                out.append(pid)
                present.add(pid)
                if len(out) == n:
                    break
    return tuple(out)


def respond_text(
    context: DialogContext,
    index: AttributeIndex,
    all_ids: Sequence[str],
    n_display: int = N_DISPLAY,
) -> tuple[str, ...]:
    """Retrieve the display list for the current text context."""
    constraints = context.merged_constraints()
    if not constraints:
        raise InvalidQueryError("context carries no constraints")
    return pad_displayed(search(index, constraints, n_display), all_ids, n_display)


def _nearest(
    encoded: EncodedCatalog,
    query_id: str,
    n: int,
    exclude: frozenset[str] = frozenset(),
) -> list[tuple[str, float]]:
    """Euclidean nearest neighbors with their distances, ties by id."""
    q = encoded.image[encoded.row(query_id)]
    dists = np.linalg.norm(encoded.image - q, axis=1)
    order = sorted(
        (pid for pid in encoded.ids if pid != query_id and pid not in exclude),
        key=lambda pid: (dists[encoded.row(pid)], pid),
    )
    return [(pid, float(dists[encoded.row(pid)])) for pid in order[:n]]


def knn(encoded: EncodedCatalog, query_id: str, n: int) -> list[str]:
    """The n nearest products to ``query_id`` by image-feature distance,
    excluding the query product itself."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    available = len(encoded) - 1
    if n > available:
        warnings.warn(
            f"knn: requested {n} neighbors, only {available} available",
            RuntimeWarning, stacklevel=2,
        )
        n = available
    return [pid for pid, _ in _nearest(encoded, query_id, n)]


class ImageGeometry:
    """Distance and clustering structure over a catalog's image features.

    The average-linkage dendrogram depends only on the feature matrix, so
    it is computed once and every click round just cuts it at a different
    threshold.
    """

    def __init__(self, encoded: EncodedCatalog):
        self.encoded = encoded
        self._linkage: np.ndarray | None = None

    @property
    def linkage_matrix(self) -> np.ndarray:
        if self._linkage is None:
            if len(self.encoded) < 2:
                raise DataError("clustering needs at least 2 products")
            self._linkage = linkage(self.encoded.image, method="average",
                                    metric="euclidean")
        return self._linkage

    def cluster_members(self, product_id: str, threshold: float) -> set[str]:
        labels = fcluster(self.linkage_matrix, t=threshold, criterion="distance")
        mine = labels[self.encoded.row(product_id)]
        return {pid for pid, lab in zip(self.encoded.ids, labels) if lab == mine}


def explore_cluster(
    geometry: ImageGeometry,
    clicked_id: str,
    knn_ids: Sequence[str],
    multiplier: float,
) -> set[str]:
    """Exploration candidates for a click: members of the clicked product's
    cluster when the dendrogram is cut at multiplier x the largest KNN
    distance, minus the clicked product and the KNN results themselves.

    An empty set (singleton cluster) tells the caller to fall back to
    KNN padding.
    """
    if not knn_ids:
        raise InvalidInputError("knn result must be non-empty")
    encoded = geometry.encoded
    q = encoded.image[encoded.row(clicked_id)]
    max_dist = max(
        float(np.linalg.norm(encoded.image[encoded.row(pid)] - q)) for pid in knn_ids
    )
    members = geometry.cluster_members(clicked_id, multiplier * max_dist)
    return members - {clicked_id} - set(knn_ids)


@dataclass(frozen=True)
class ClickResponse:
    """Display list for a click round plus how it was assembled."""

    displayed: tuple[str, ...]
    n1: int
    multiplier: float
    knn_ids: tuple[str, ...]
    explore_ids: tuple[str, ...]


def draw_n1(round_index: int, rng: np.random.Generator,
            n_display: int = N_DISPLAY, offset: int = 1) -> int:
    """n1 ~ uniform on {min(round + offset, N), ..., N}: later rounds show
    more exact neighbors and explore less."""
    lo = min(round_index + offset, n_display)
    return int(rng.integers(lo, n_display + 1))


def respond_click(
    clicked_id: str,
    round_index: int,
    shown_history: Sequence[Sequence[str]],
    geometry: ImageGeometry,
    config: FsaConfig,
    rng: np.random.Generator,
    n_display: int = N_DISPLAY,
) -> ClickResponse:
    """Exploitation-exploration response to an image click.

    n1 nearest neighbors of the clicked product come first, then 6 - n1
    products sampled from its cluster.  Products already shown in this
    session are excluded where possible; shortfalls pad with further
    nearest neighbors and finally with the lowest unused ids.
    """
    if not shown_history or clicked_id not in tuple(shown_history[-1]):
        raise ProtocolError(
            f"clicked product {clicked_id!r} was not in the previous display"
        )
    encoded = geometry.encoded
    shown = {pid for disp in shown_history for pid in disp}

    n1 = draw_n1(round_index, rng, n_display, config.n1_offset)
    exclude = frozenset(shown)
    if len(encoded) - 1 - len(exclude - {clicked_id}) < n1:
        exclude = frozenset()  # not enough unseen products: allow repeats
    nearest = _nearest(encoded, clicked_id, len(encoded), exclude)
    knn_ids = [pid for pid, _ in nearest[:n1]]

    lo, hi = config.cluster_multiplier_range
    multiplier = float(rng.uniform(lo, hi))
    candidates = explore_cluster(geometry, clicked_id, knn_ids, multiplier)
    candidates -= shown
    candidates -= set(knn_ids)

    need = n_display - n1
    pool = sorted(candidates)
    if len(pool) > need:
        picked = [pool[i] for i in rng.choice(len(pool), size=need, replace=False)]
        explore_ids = sorted(picked)
    else:
        explore_ids = pool

    displayed = list(knn_ids) + list(explore_ids)
    if len(displayed) < n_display:  # pad with next-nearest, then lowest ids
        used = set(displayed)
        for pid, _ in nearest:
            if len(displayed) == n_display:
                break
            if pid not in used:
                displayed.append(pid)
                used.add(pid)
    return ClickResponse(
        displayed=pad_displayed(displayed, encoded.ids, n_display),
        n1=n1,
        multiplier=multiplier,
        knn_ids=tuple(knn_ids),
        explore_ids=tuple(explore_ids),
    )


def update_context_after_click(
    context: DialogContext, product: Product, vocab: Vocabulary
) -> None:
    """A click reveals preference: fill in missing gender/category from the
    clicked product (existing context is never overwritten by a click)."""
    if context.gender is None:
        context.gender = product.gender
    if context.category is None:
        context.set_category(product.category, vocab)


class DialogSimulator:
    """Generates dialog sessions and answers rule-based responder calls."""

    def __init__(
        self,
        vocab: Vocabulary,
        products: Sequence[Product],
        encoded: EncodedCatalog,
        config: FsaConfig | None = None,
    ):
        self.vocab = vocab
        self.products = {p.id: p for p in products}
        self.index = AttributeIndex.build(products)
        self.geometry = ImageGeometry(encoded)
        self.config = config or FsaConfig()
        self.all_ids = [p.id for p in products]

    def generate_session(self, rng: np.random.Generator, session_id: str) -> DialogSession:
        context = DialogContext()
        rounds: list[DialogRound] = []
        node = step_fsa(NODE_START, context, self.config, rng, has_display=False)
        while True:
            r = len(rounds)
            if node in TEXT_NODES:
                event = gen_text_query(node, context, self.vocab, rng,
                                       self.config.p_context_switch)
                event = replace(event, round_index=r)
                displayed = respond_text(context, self.index, self.all_ids)
                rounds.append(DialogRound(event, displayed, context.snapshot()))
            elif node == NODE_IMAGE_CLICK:
                prev = rounds[-1].displayed
                clicked = prev[int(rng.integers(len(prev)))]
                resp = respond_click(clicked, r, [rd.displayed for rd in rounds],
                                     self.geometry, self.config, rng)
                update_context_after_click(context, self.products[clicked], self.vocab)
                event = QueryEvent(kind="image_click", round_index=r,
                                   clicked_product_id=clicked)
                rounds.append(DialogRound(event, resp.displayed,
                                          context.snapshot(), n1=resp.n1))
            else:
                raise MMBrowseError(f"cannot generate a round for node {node!r}")
            if len(rounds) >= self.config.max_rounds:
                break
            node = step_fsa(node, context, self.config, rng)
            if node == NODE_END:
                break
        return DialogSession(session_id=session_id, rounds=tuple(rounds))

    def generate(self, n_sessions: int, seed: int) -> list[DialogSession]:
        """Generate ``n_sessions`` sessions, one independent rng stream per
        session so the dataset is reproducible and parallelizable."""
        if n_sessions < 1:
            raise ConfigError("n_sessions must be >= 1")
        return [
            self.generate_session(stream_rng(seed, STREAM_SIMULATOR, i), f"S{i + 1:05d}")
            for i in range(n_sessions)
        ]


def generate_dataset(
    vocab: Vocabulary,
    products: Sequence[Product],
    encoded: EncodedCatalog,
    config: FsaConfig,
    n_sessions: int,
    seed: int,
) -> list[DialogSession]:
    return DialogSimulator(vocab, products, encoded, config).generate(n_sessions, seed)


def save_sessions(sessions: Sequence[DialogSession], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            fh.write(json.dumps(s.to_json(), sort_keys=True))
            fh.write("\n")


def load_sessions(path) -> list[DialogSession]:
    sessions = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                sessions.append(DialogSession.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"bad session record: {exc}", line=lineno) from exc
    return sessions
