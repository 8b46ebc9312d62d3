"""Prefix-conditioned span-selection network.

Pipeline per instance: marker-labeled context and the target event's role
prompt are encoded by a shared backbone. A co-occurrence embedding (encoder
pass over the concatenation of all co-occurring event prompts) and a
structure embedding (encoder pass under the sentence-structure mask followed
by a decoder refinement) are each compressed into per-layer key/value
prefixes by a learnable query. The context encoder takes the structure
prefix, the context decoder takes the co-occurrence prefix, and the prompt
decoder takes the structure prefix again; slot vectors gathered from the
prompt representation yield start/end logits over the context.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import Backbone, ModelConfig, PrefixPack, attention
from .corpus import Instance, LabeledContext, TokenSpan, label_context, structure_mask_for
from .errors import DataError
from .templates import PromptTemplate, concat_co_prompts
from .vocab import Vocab


@dataclass
class AwarenessEmbedding:
    kind: str  # "co_occurrence" | "structure"
    matrix: Tensor  # sequence length x hidden


@dataclass
class Representations:
    h_enc: Tensor  # L x h, structure-prefixed context encoding
    h_ctx: Tensor  # L x h, event-oriented context representation
    h_prompt: Tensor  # prompt length x h, context-oriented prompt representation


@dataclass
class SlotSelector:
    slot_index: int
    role: str
    psi: Tensor
    start_logits: Tensor
    end_logits: Tensor
    start_log_probs: np.ndarray
    end_log_probs: np.ndarray

    @property
    def start_probs(self) -> np.ndarray:
        return np.exp(self.start_log_probs)

    @property
    def end_probs(self) -> np.ndarray:
        return np.exp(self.end_log_probs)


def _np_log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max()
    return shifted - np.log(np.exp(shifted).sum())


@dataclass
class EncodedInstance:
    """Model-ready view of one extraction instance."""

    instance: Instance
    labeled: LabeledContext
    labeled_ids: list[int]
    structure_additive: np.ndarray
    co_prompt_ids: list[int]
    prompt_ids: list[int]
    slot_layout: tuple[tuple[int, str], ...]
    gold_labeled: dict[str, list[TokenSpan]]  # role -> gold spans, labeled coords

    @property
    def doc_id(self) -> str:
        return self.instance.document.doc_id

    @property
    def event_index(self) -> int:
        return self.instance.target_event_index


class ExtractionModel:
    """Owns all parameters and the per-instance forward pass."""

    def __init__(self, config: ModelConfig, vocab: Vocab):
        if config.vocab_size == 0:
            config = ModelConfig(**{**config.to_dict(), "vocab_size": len(vocab)})
        if config.vocab_size != len(vocab):
            raise ValueError(f"config vocab_size {config.vocab_size} != vocabulary size {len(vocab)}")
        self.config = config
        self.vocab = vocab
        rng = np.random.default_rng(config.seed)
        self.backbone = Backbone(config, rng=rng)
        self.params: dict[str, Tensor] = dict(self.backbone.params)
        h, c, plen = config.hidden, config.layers, config.prefix_len
        for kind in ("co", "structure"):
            self.params[f"compress.{kind}.query"] = Tensor(rng.normal(0.0, 0.02, size=(plen, h)), requires_grad=True)
            self.params[f"compress.{kind}.expand.w"] = Tensor(
                rng.normal(0.0, 0.02, size=(h, 2 * c * h)), requires_grad=True
            )
            self.params[f"compress.{kind}.expand.b"] = Tensor(np.zeros(2 * c * h), requires_grad=True)
        self.params["selector.w_start"] = Tensor(rng.normal(0.0, 0.02, size=(h,)), requires_grad=True)
        self.params["selector.w_end"] = Tensor(rng.normal(0.0, 0.02, size=(h,)), requires_grad=True)
        self.truncations = 0

    # -- instance preparation ------------------------------------------------

    def encode_instance(self, instance: Instance, templates: Mapping[str, PromptTemplate]) -> EncodedInstance:
        event = instance.target_event
        template = templates.get(event.event_type)
        if template is None:
            raise DataError(f"{instance.document.doc_id}: no template for event type {event.event_type!r}")
        labeled = label_context(instance)
        mask = structure_mask_for(labeled)
        gold_labeled: dict[str, list[TokenSpan]] = {}
        for arg in event.arguments:
            gold_labeled.setdefault(arg.role, []).append(labeled.map_span_from_original(arg.span))
        return EncodedInstance(
            instance=instance,
            labeled=labeled,
            labeled_ids=self.vocab.encode(labeled.labeled_tokens),
            structure_additive=mask.additive(),
            co_prompt_ids=self.vocab.encode(concat_co_prompts(instance, templates)),
            prompt_ids=self.vocab.encode(template.template_tokens),
            slot_layout=template.slot_layout,
            gold_labeled=gold_labeled,
        )

    # -- awareness embeddings and prefixes ------------------------------------

    def compute_wc(self, enc: EncodedInstance) -> AwarenessEmbedding:
        """Plain encoder pass over the concatenated co-occurring prompts."""
        ids = enc.co_prompt_ids
        if len(ids) > self.config.max_context:
            ids = ids[: self.config.max_context]
            self.truncations += 1
        return AwarenessEmbedding(kind="co_occurrence", matrix=self.backbone.encoder_forward(ids))

    def compute_ws(self, enc: EncodedInstance) -> AwarenessEmbedding:
        """Masked encoder pass refined by the decoder (input = memory)."""
        hidden = self.backbone.encoder_forward(enc.labeled_ids, additive_mask=enc.structure_additive)
        refined = self.backbone.decoder_forward(hidden, memory=hidden)
        return AwarenessEmbedding(kind="structure", matrix=refined)

    def compress_prefix(self, embedding: AwarenessEmbedding) -> PrefixPack:
        """Learnable query attends over the embedding; a linear expansion is
        split evenly into per-layer (K, V) prefix pairs."""
        kind = "co" if embedding.kind == "co_occurrence" else "structure"
        query = self.params[f"compress.{kind}.query"]
        pooled = attention(query, embedding.matrix, embedding.matrix, heads=self.config.heads)
        expanded = pooled @ self.params[f"compress.{kind}.expand.w"] + self.params[f"compress.{kind}.expand.b"]
        plen, c, h = self.config.prefix_len, self.config.layers, self.config.hidden
        segmented = expanded.reshape(plen, c, 2, h)
        return PrefixPack(
            layers=tuple((segmented[:, i, 0, :], segmented[:, i, 1, :]) for i in range(c))
        )

    # -- forward -------------------------------------------------------------

    def forward(
        self,
        enc: EncodedInstance,
        use_structure: bool = True,
        use_co: bool = True,
    ) -> tuple[Representations, list[SlotSelector]]:
        structure_pack = self.compress_prefix(self.compute_ws(enc)) if use_structure else None
        co_pack = self.compress_prefix(self.compute_wc(enc)) if use_co else None

        h_enc = self.backbone.encoder_forward(enc.labeled_ids, prefix_pack=structure_pack)
        h_ctx = self.backbone.decoder_forward(h_enc, memory=h_enc, self_prefix=co_pack)
        prompt_x = self.backbone.embed_tokens(enc.prompt_ids)
        h_prompt = self.backbone.decoder_forward(prompt_x, memory=h_enc, self_prefix=structure_pack)

        w_start = self.params["selector.w_start"]
        w_end = self.params["selector.w_end"]
        selectors = []
        for slot_index, (position, role) in enumerate(enc.slot_layout):
            psi = h_prompt[position]
            start_logits = h_ctx @ (psi * w_start)
            end_logits = h_ctx @ (psi * w_end)
            selectors.append(
                SlotSelector(
                    slot_index=slot_index,
                    role=role,
                    psi=psi,
                    start_logits=start_logits,
                    end_logits=end_logits,
                    start_log_probs=_np_log_softmax(start_logits.data),
                    end_log_probs=_np_log_softmax(end_logits.data),
                )
            )
        return Representations(h_enc=h_enc, h_ctx=h_ctx, h_prompt=h_prompt), selectors


def selection_loss(selectors: Sequence[SlotSelector], targets: Sequence[TokenSpan]) -> Tensor:
    """Negative log-likelihood of the assigned start/end positions, summed
    over slots. Targets are in labeled coordinates; (0, 0) marks empty slots."""
    if len(selectors) != len(targets):
        raise ValueError(f"{len(selectors)} selectors but {len(targets)} targets")
    total: Tensor | None = None
    for selector, span in zip(selectors, targets):
        ls = ad.log_softmax(selector.start_logits)
        le = ad.log_softmax(selector.end_logits)
        term = -(ls[span.start] + le[span.end])
        total = term if total is None else total + term
    if total is None:
        return Tensor(0.0)
    return total
