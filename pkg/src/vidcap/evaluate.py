"""Checkpoint evaluation: caption every corpus item and score the result."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .afs import apply_selection, select_from_clip
from .decoder import GenerationRequest
from .metrics import EvalReport, compute_report
from .textproc import PosTagger, detokenize, load_corpus
from .training import load_checkpoint, load_vocab_and_concepts
from .video import read_vvid


@dataclass
class EvalOutcome:
    report: EvalReport
    predictions: list[dict]
    errors: list[dict] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.errors)


def caption_video(model, vocab, clip, request: GenerationRequest) -> tuple[str, list[int], float]:
    """Full single-video path: frame selection, then generation."""
    selected = apply_selection(clip, select_from_clip(clip, model.enc_cfg.frames))
    hyp = model.generate_for_clip(selected, request)
    words = vocab.decode_ids(hyp.tokens)
    return detokenize(words), list(hyp.tokens), hyp.logprob


def evaluate_checkpoint(
    ckpt_dir: str | Path,
    corpus_path: str | Path,
    request: GenerationRequest | None = None,
    split: str = "all",
    train_corpus_path: str | Path | None = None,
    out_dir: str | Path | None = None,
) -> EvalOutcome:
    """Generate a caption per record and score against its references.

    A record whose video file is unreadable is skipped and logged; the
    outcome is then flagged partial instead of failing the whole run.
    Novelty/vocab-usage stats are measured against the train split of
    train_corpus_path (default: the evaluated corpus itself).
    """
    request = request or GenerationRequest()
    model, _ = load_checkpoint(ckpt_dir)
    vocab, _concepts = load_vocab_and_concepts(ckpt_dir)

    corpus_path = Path(corpus_path)
    records = load_corpus(corpus_path)
    if split != "all":
        records = [r for r in records if r.split == split]
    if not records:
        raise ValueError(f"no records for split {split!r}")

    train_path = Path(train_corpus_path) if train_corpus_path else corpus_path
    train_caps = [c for r in load_corpus(train_path) if r.split == "train" for c in r.captions]
    if not train_caps:
        # nothing marked train anywhere: fall back to the references themselves
        train_caps = [c for r in records for c in r.captions]

    preds, refs, predictions, errors = [], [], [], []
    for rec in records:
        try:
            clip = read_vvid(corpus_path.parent / rec.video)
        except (OSError, ValueError) as exc:
            errors.append({"id": rec.id, "error": str(exc)})
            continue
        text, tokens, logprob = caption_video(model, vocab, clip, request)
        preds.append(text)
        refs.append(rec.captions)
        predictions.append({"id": rec.id, "caption": text, "tokens": tokens, "logprob": logprob})

    tagger = PosTagger.load_default()
    report = compute_report(preds, refs, train_caps, vocab.learned_count, tagger)
    outcome = EvalOutcome(report, predictions, errors)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "predictions.jsonl").open("w") as fh:
            for row in predictions:
                fh.write(json.dumps(row) + "\n")
        payload = report.to_json()
        payload["partial"] = outcome.partial
        payload["errors"] = errors
        (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    return outcome
