"""Synthetic attribute world: images, questions, edit records and the vocabulary.

An image holds ``objects_per_image`` objects, each with a value for every
attribute of the world. Its feature vector is the concatenation of one
one-hot block per (object slot, attribute) plus seeded Gaussian noise, so
two images with identical attributes and seed have identical features.
Questions ask for one attribute of one object in the image.
"""

import itertools
import math
from collections.abc import Iterator, Sequence
from typing import Any, Self

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PrivateAttr,
    field_validator,
    model_validator,
)

from tblab.core.constants import CORPUS_FORMAT, NONE_TOKEN, PAD_TOKEN
from tblab.core.env import Env
from tblab.core.helpers import derive_rng, stable_hash
from tblab.core.logger import log_start_end, setup_logger
from tblab.core.standard_models.abstract.errors import InvalidToken, WorldExhausted
from tblab.model.transformer import ModelInput

logger = setup_logger("tblab.data.world", level=Env().LOGGER_LEVEL)

OBJECT_NAMES = (
    "ball", "cube", "cup", "hat", "shoe", "car", "dog", "tree", "lamp", "book",
)
ATTRIBUTE_VALUES: dict[str, tuple[str, ...]] = {
    "color": ("red", "blue", "green", "yellow", "black", "white", "brown", "purple"),
    "material": ("wood", "metal", "glass", "plastic", "cloth", "stone", "paper", "rubber"),
    "size": ("tiny", "small", "little", "medium", "big", "large", "huge", "giant"),
    "pattern": ("striped", "dotted", "plain", "checked", "floral", "spotted", "zigzag", "wavy"),
}

# Question forms. Form 0 is the record question; the others are rephrases
# with identical semantics. Every form ends on the shared "?" answer slot.
QUESTION_FORMS: tuple[tuple[str, ...], ...] = (
    ("what", "is", "the", "{attr}", "of", "the", "{obj}", "?"),
    ("tell", "me", "the", "{attr}", "of", "the", "{obj}", "?"),
    ("which", "{attr}", "does", "the", "{obj}", "have", "?"),
)

_EMBED_ATTR_WEIGHT = 1.0
_EMBED_OBJECT_WEIGHT = 0.5
_EMBED_IMAGE_NORM = 0.3


class WorldConfig(BaseModel):
    """Size and seed of the synthetic world."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_objects: int = Field(8, ge=1, le=len(OBJECT_NAMES))
    n_attributes: int = Field(3, ge=1, le=len(ATTRIBUTE_VALUES))
    n_values: int = Field(6, ge=2, le=8)
    objects_per_image: int = Field(2, ge=1)
    n_records: int = Field(2000, ge=1)
    noise_std: float = Field(0.05, ge=0)
    prior_share: float = Field(0.5, gt=0, lt=1)
    seed: int = Field(7, ge=0)

    @model_validator(mode="after")
    def _check_objects(self) -> Self:
        if self.objects_per_image > self.n_objects:
            msg = "objects_per_image cannot exceed n_objects"
            raise ValueError(msg)
        if self.prior_share < 1 / self.n_values:
            msg = "prior_share cannot be below the uniform share 1 / n_values"
            raise ValueError(msg)
        return self

    @property
    def objects(self) -> tuple[str, ...]:
        return OBJECT_NAMES[: self.n_objects]

    @property
    def attributes(self) -> tuple[str, ...]:
        return tuple(ATTRIBUTE_VALUES)[: self.n_attributes]

    def values(self, attribute: str) -> tuple[str, ...]:
        return ATTRIBUTE_VALUES[attribute][: self.n_values]

    def typical_value(self, attribute: str) -> str:
        """The value an attribute takes most often; its first listed value."""
        return self.values(attribute)[0]

    @property
    def value_probs(self) -> np.ndarray:
        """Draw probabilities over an attribute's values, typical value first."""
        rest = (1.0 - self.prior_share) / (self.n_values - 1)
        probs = np.full(self.n_values, rest)
        probs[0] = self.prior_share
        return probs

    @property
    def feature_dim(self) -> int:
        return self.n_objects * self.n_attributes * self.n_values

    @property
    def capacity(self) -> int:
        """Number of distinct (image attributes, question) facts."""
        k = self.objects_per_image
        images = math.comb(self.n_objects, k) * (self.n_values**self.n_attributes) ** k
        return images * k * self.n_attributes


class Vocabulary:
    """Token <-> id mapping shared by the corpus and the model."""

    def __init__(self, tokens: Sequence[str]):
        if len(set(tokens)) != len(tokens):
            msg = "vocabulary tokens must be unique"
            raise ValueError(msg)
        self.tokens = list(tokens)
        self._index = {token: i for i, token in enumerate(self.tokens)}

    @classmethod
    def from_world(cls, world: WorldConfig) -> "Vocabulary":
        tokens = [PAD_TOKEN, NONE_TOKEN]
        for form in QUESTION_FORMS:
            tokens.extend(w for w in form if not w.startswith("{") and w not in tokens)
        tokens.extend(world.attributes)
        tokens.extend(world.objects)
        for attribute in world.attributes:
            tokens.extend(world.values(attribute))
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    __hash__ = None  # type: ignore[assignment]

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            msg = f"unknown token {token!r}"
            raise InvalidToken(msg) from None

    def encode(self, tokens: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.id(t) for t in tokens)

    def decode(self, token_id: int) -> str:
        return self.tokens[int(token_id)]

    def answer_ids(self, world: WorldConfig) -> list[int]:
        ids = [self.id(NONE_TOKEN)]
        for attribute in world.attributes:
            ids.extend(self.id(v) for v in world.values(attribute))
        return ids


class ImageSpec(BaseModel):
    """An image of the world: object -> attribute -> value plus its features."""

    model_config = ConfigDict(frozen=True)

    id: str
    attrs: dict[str, dict[str, str]]
    features: list[float]

    @property
    def feature_array(self) -> np.ndarray:
        return np.asarray(self.features, dtype=np.float64)

    @property
    def facts(self) -> frozenset[tuple[str, str, str]]:
        return frozenset(
            (obj, attr, value)
            for obj, values in self.attrs.items()
            for attr, value in values.items()
        )


class EditRecord(BaseModel):
    """
    One editable fact.

    ``question`` is ``T1``, ``image`` is ``I1``, ``answer`` is the pre-edit
    answer ``y_e`` and ``target`` the edit target ``a``.
    """

    model_config = ConfigDict(frozen=True)

    id: int
    image: ImageSpec
    question: list[str]
    answer: str
    target: str
    rephrase_q: list[str]
    rephrase_img: ImageSpec
    embedding: list[float]

    @field_validator("embedding")
    @classmethod
    def _unit_norm(cls, value: list[float]) -> list[float]:
        norm = float(np.linalg.norm(value))
        if abs(norm - 1.0) > 1e-6:
            msg = f"embedding must be unit-norm, got norm {norm}"
            raise ValueError(msg)
        return value

    @model_validator(mode="after")
    def _target_differs(self) -> Self:
        if self.target == self.answer:
            msg = f"record {self.id}: target equals the pre-edit answer"
            raise ValueError(msg)
        return self

    @property
    def pre_edit_answer(self) -> str:
        return self.answer

    @property
    def target_answer(self) -> str:
        return self.target

    @property
    def slot(self) -> tuple[str, str]:
        """(object, attribute) asked by the question."""
        return question_slot(self.question)

    @property
    def embedding_array(self) -> np.ndarray:
        return np.asarray(self.embedding, dtype=np.float64)


class Corpus(BaseModel):
    """An immutable list of edit records generated from (or for) one world."""

    model_config = ConfigDict(frozen=True)

    format: str = CORPUS_FORMAT
    world: WorldConfig
    records: list[EditRecord]

    _vocab: Vocabulary = PrivateAttr()
    _by_id: dict[int, EditRecord] = PrivateAttr()

    def model_post_init(self, __context: Any) -> None:
        self._vocab = Vocabulary.from_world(self.world)
        self._by_id = {r.id: r for r in self.records}
        if len(self._by_id) != len(self.records):
            msg = "record ids must be unique"
            raise ValueError(msg)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    def get(self, record_id: int) -> EditRecord:
        return self._by_id[record_id]

    def model_input(
        self, question: Sequence[str], image: ImageSpec | None
    ) -> ModelInput:
        """Model input for a question (tokens) and an image or ABSENT."""
        return ModelInput(
            text_ids=self.vocab.encode(question),
            image_features=None if image is None else image.feature_array,
        )


def question_slot(question: Sequence[str]) -> tuple[str, str]:
    """Recover (object, attribute) from any question form."""
    for form in QUESTION_FORMS:
        if len(form) != len(question):
            continue
        slots = {}
        for template, token in zip(form, question, strict=True):
            if template.startswith("{"):
                slots[template] = token
            elif template != token:
                break
        else:
            return slots["{obj}"], slots["{attr}"]
    msg = f"not a world question: {' '.join(question)}"
    raise InvalidToken(msg)


def render_question(form: int, obj: str, attribute: str) -> list[str]:
    return [
        w.format(attr=attribute, obj=obj) if w.startswith("{") else w
        for w in QUESTION_FORMS[form]
    ]


def records_disjoint(first: EditRecord, second: EditRecord) -> bool:
    """Zero attribute overlap: no shared image fact and a different question slot."""
    return first.slot != second.slot and not (first.image.facts & second.image.facts)


def _image_code(attrs: dict[str, dict[str, str]], world: WorldConfig) -> np.ndarray:
    code = np.zeros(world.feature_dim)
    block = world.n_values
    for o, obj in enumerate(world.objects):
        if obj not in attrs:
            continue
        for a, attribute in enumerate(world.attributes):
            value = attrs[obj][attribute]
            offset = (o * world.n_attributes + a) * block
            code[offset + world.values(attribute).index(value)] = 1.0
    return code


def make_image(
    attrs: dict[str, dict[str, str]], world: WorldConfig, salt: str = ""
) -> ImageSpec:
    """Deterministic image: attribute code plus noise seeded by (attributes, seed)."""
    key = stable_hash({"attrs": attrs, "salt": salt})
    rng = derive_rng(world.seed, "image", key)
    features = _image_code(attrs, world) + rng.normal(0.0, world.noise_std, world.feature_dim)
    return ImageSpec(
        id=f"img-{key}",
        attrs=attrs,
        features=[float(x) for x in features.astype(np.float32)],
    )


def embed_record(
    question: Sequence[str], image: ImageSpec, world: WorldConfig
) -> list[float]:
    """
    Unit-norm bag-of-template-slot embedding.

    Blocks: question form one-hot, attribute slot (weight 1), object slot
    (weight 0.5), noise-free image code scaled to norm 0.3. Questions sharing
    a template (form and attribute) therefore score higher cosine similarity
    with each other than with any other template, whatever the images.
    """
    obj, attribute = question_slot(question)
    form_vec = np.zeros(len(QUESTION_FORMS))
    for f in range(len(QUESTION_FORMS)):
        if render_question(f, obj, attribute) == list(question):
            form_vec[f] = 1.0
    attr_vec = np.zeros(world.n_attributes)
    attr_vec[world.attributes.index(attribute)] = _EMBED_ATTR_WEIGHT
    obj_vec = np.zeros(world.n_objects)
    obj_vec[world.objects.index(obj)] = _EMBED_OBJECT_WEIGHT
    code = _image_code(image.attrs, world)
    code *= _EMBED_IMAGE_NORM / np.linalg.norm(code)
    vec = np.concatenate([form_vec, attr_vec, obj_vec, code])
    return [float(x) for x in vec / np.linalg.norm(vec)]


def _random_attrs(
    world: WorldConfig, rng: np.random.Generator
) -> dict[str, dict[str, str]]:
    probs = world.value_probs
    objects = sorted(
        rng.choice(world.n_objects, size=world.objects_per_image, replace=False)
    )
    return {
        world.objects[o]: {
            attribute: world.values(attribute)[int(rng.choice(world.n_values, p=probs))]
            for attribute in world.attributes
        }
        for o in objects
    }


def _all_facts(world: WorldConfig) -> Iterator[tuple[dict[str, dict[str, str]], str, str]]:
    assignments = list(
        itertools.product(*(world.values(a) for a in world.attributes))
    )
    for objects in itertools.combinations(world.objects, world.objects_per_image):
        for values in itertools.product(assignments, repeat=len(objects)):
            attrs = {
                obj: dict(zip(world.attributes, vals, strict=True))
                for obj, vals in zip(objects, values, strict=True)
            }
            for obj in objects:
                for attribute in world.attributes:
                    yield attrs, obj, attribute


def _fact_weight(attrs: dict[str, dict[str, str]], world: WorldConfig) -> float:
    probs = world.value_probs
    weight = 1.0
    for values in attrs.values():
        for attribute, value in values.items():
            weight *= probs[world.values(attribute).index(value)]
    return weight


def _sample_facts(
    world: WorldConfig, rng: np.random.Generator
) -> list[tuple[dict[str, dict[str, str]], str, str]]:
    if world.capacity <= 4 * world.n_records:
        facts = list(_all_facts(world))
        weights = np.array([_fact_weight(attrs, world) for attrs, _, _ in facts])
        chosen = rng.choice(
            len(facts), size=world.n_records, replace=False, p=weights / weights.sum()
        )
        return [facts[int(i)] for i in chosen]
    seen: set[str] = set()
    facts = []
    while len(facts) < world.n_records:
        attrs = _random_attrs(world, rng)
        obj = sorted(attrs)[int(rng.integers(len(attrs)))]
        attribute = world.attributes[int(rng.integers(world.n_attributes))]
        key = stable_hash({"attrs": attrs, "q": [obj, attribute]})
        if key in seen:
            continue
        seen.add(key)
        facts.append((attrs, obj, attribute))
    return facts


@log_start_end(logger=logger)
def generate_corpus(world: WorldConfig) -> Corpus:
    """
    Generate ``world.n_records`` unique facts as edit records.

    Every record has a unique (image attributes, question) pair. Attribute
    values are drawn with ``world.prior_share`` on the typical value. The
    target answer is a seeded draw among the other values of the asked
    attribute, never the typical value while another candidate remains.
    The rephrased image shares the attributes with fresh noise.

    Raises
    ------
    WorldExhausted
        If the world holds fewer distinct facts than requested.
    """
    if world.n_records > world.capacity:
        msg = f"world holds {world.capacity} distinct facts, {world.n_records} requested"
        raise WorldExhausted(msg)
    rng = derive_rng(world.seed, "corpus")
    records = []
    for record_id, (attrs, obj, attribute) in enumerate(_sample_facts(world, rng)):
        image = make_image(attrs, world)
        question = render_question(0, obj, attribute)
        answer = attrs[obj][attribute]
        others = [v for v in world.values(attribute) if v != answer]
        atypical = [v for v in others if v != world.typical_value(attribute)]
        candidates = atypical or others
        target = candidates[int(rng.integers(len(candidates)))]
        rephrase_form = 1 + int(rng.integers(len(QUESTION_FORMS) - 1))
        rephrase_img = make_image(attrs, world, salt=f"rephrase-{record_id}")
        records.append(
            EditRecord(
                id=record_id,
                image=image,
                question=question,
                answer=answer,
                target=target,
                rephrase_q=render_question(rephrase_form, obj, attribute),
                rephrase_img=rephrase_img.model_copy(update={"id": f"{image.id}-r{record_id}"}),
                embedding=embed_record(question, image, world),
            )
        )
    logger.info(f"generated {len(records)} records (capacity {world.capacity})")
    return Corpus(world=world, records=records)
