"""The full captioner: video encoder, concept head, caption decoder."""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from .autodiff import Tensor
from .decoder import CaptionDecoder, DecoderConfig, GenerationRequest, Hypothesis, generate
from .encoder import ConceptHead, EncoderConfig, VideoEncoder
from .video import VideoClip


class CaptionModel:
    """Holds the three trainable parts and a shared dropout stream.

    The concept head's sigmoid output doubles as the decoder's
    start-of-sequence input, so end-to-end training sends gradient into
    the head both through its own loss and through the captions.
    """

    def __init__(self, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, seed: int = 0):
        if dec_cfg.concept_dim != enc_cfg.concept_count:
            raise ValueError("decoder concept width must match the concept head")
        init_rng = np.random.default_rng(seed)
        self.enc_cfg = enc_cfg
        self.dec_cfg = dec_cfg
        self.encoder = VideoEncoder(enc_cfg, init_rng)
        self.concept_head = ConceptHead(enc_cfg, init_rng)
        self.decoder = CaptionDecoder(dec_cfg, init_rng)
        self.training = False
        self.dropout_rng = np.random.default_rng(seed + 1)

    def named_parameters(self):
        yield from self.encoder.named_parameters("encoder")
        yield from self.concept_head.named_parameters("concept_head")
        yield from self.decoder.named_parameters("decoder")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def video_tokens(self, clip: VideoClip) -> Tensor:
        return self.encoder(clip, rng=self.dropout_rng, training=self.training)

    def concept_logits(self, tokens: Tensor) -> Tensor:
        return self.concept_head.logits(tokens, rng=self.dropout_rng, training=self.training)

    def concept_probs(self, tokens: Tensor) -> Tensor:
        return self.concept_head(tokens, rng=self.dropout_rng, training=self.training)

    def caption_logits(self, semantic: Tensor, token_ids, enc_tokens: Tensor) -> Tensor:
        hidden = self.decoder.embed_with_semantic_sos(semantic, list(token_ids))
        return self.decoder(hidden, enc_tokens, rng=self.dropout_rng, training=self.training)

    def generate_for_clip(self, clip: VideoClip, request: GenerationRequest) -> Hypothesis:
        """Eval-mode generation for an already frame-selected clip."""
        was_training = self.training
        self.training = False
        try:
            tokens = self.video_tokens(clip)
            semantic = self.concept_probs(tokens)
            step = self.decoder.step_fn(semantic, tokens)
            return generate(step, request)
        finally:
            self.training = was_training

    def config_blob(self) -> dict:
        return {"encoder": asdict(self.enc_cfg), "decoder": asdict(self.dec_cfg)}


def model_from_config_blob(blob: dict, seed: int = 0) -> CaptionModel:
    enc = dict(blob["encoder"])
    for key in ("patch", "window", "depths", "heads", "concept_hidden"):
        enc[key] = tuple(enc[key])
    return CaptionModel(EncoderConfig(**enc), DecoderConfig(**blob["decoder"]), seed=seed)
