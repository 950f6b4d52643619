"""Training-side adversarial samples of one edit."""

from pydantic import BaseModel, ConfigDict

from tblab.core.helpers import derive_rng
from tblab.core.standard_models.abstract.errors import CorpusTooSmall
from tblab.data.sampling import SampledSets, retrieve_similar
from tblab.data.world import Corpus, EditRecord, ImageSpec, records_disjoint
from tblab.editing.config import LossType


class Query(BaseModel):
    """A question with an image, or with no image (ABSENT)."""

    model_config = ConfigDict(frozen=True)

    question: list[str]
    image: ImageSpec | None = None


class AdversarialBatch(BaseModel):
    """
    Samples the locality terms of the editing loss are computed on.

    ``ri_sample`` pairs the edit question with an unrelated image,
    ``ci_sample`` is a similar question with its own image, ``ni_sample``
    the edit question without an image. ``unrelated_multimodal`` and
    ``unrelated_text`` are one unrelated query with and without its image.
    """

    model_config = ConfigDict(frozen=True)

    ri_sample: Query | None = None
    ci_sample: Query | None = None
    ni_sample: Query | None = None
    unrelated_multimodal: Query | None = None
    unrelated_text: Query | None = None
    provenance: dict[str, int] = {}

    def sample(self, loss_type: LossType) -> Query | None:
        return {
            LossType.RI: self.ri_sample,
            LossType.CI: self.ci_sample,
            LossType.NI: self.ni_sample,
        }[loss_type]


def build_adversarial_batch(
    edit: EditRecord, corpus: Corpus, eval_sets: SampledSets, seed: int
) -> AdversarialBatch:
    """
    Draw the training samples of ``edit`` apart from its evaluation grid.

    The RI image and the unrelated query come from records with zero
    attribute overlap with the edit that supplied none of the grid's texts
    or images. The CI pair is the most similar record after the grid's
    ``T2`` source. The NI sample is the edit question itself without an
    image, the text-only twin of the edit.

    Raises
    ------
    CorpusTooSmall
        If fewer than two unused disjoint records remain.
    NoCandidate
        If retrieval finds no CI pair.
    """
    rng = derive_rng(seed, edit.id, "adversarial")
    used = set(eval_sets.provenance.values())
    disjoint = [
        r for r in corpus.records if r.id not in used and records_disjoint(edit, r)
    ]
    if len(disjoint) < 2:
        msg = f"edit {edit.id}: {len(disjoint)} unused disjoint records, the batch needs 2"
        raise CorpusTooSmall(msg)
    ri_source = disjoint[int(rng.integers(len(disjoint)))]
    rest = [r for r in disjoint if r.id != ri_source.id]
    unrelated = rest[int(rng.integers(len(rest)))]
    similar = retrieve_similar(edit, corpus, exclude={eval_sets.provenance["T2"]})
    return AdversarialBatch(
        ri_sample=Query(question=edit.question, image=ri_source.image),
        ci_sample=Query(question=similar.question, image=similar.image),
        ni_sample=Query(question=edit.question, image=None),
        unrelated_multimodal=Query(question=unrelated.question, image=unrelated.image),
        unrelated_text=Query(question=unrelated.question, image=None),
        provenance={"RI": ri_source.id, "CI": similar.record_id, "unrelated": unrelated.id},
    )
