"""Offline Percept + Chat pass that fills the knowledge cache."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import chat as chat_mod
from ..errors import ConfigurationError, MissingAssetError
from ..percept import EnhancerSpec, VisualExtractorSpec, enhance, extract_visual_knowledge, resolve_extractor
from .cache import INDEX, KnowledgeBundle, KnowledgeCache, write_bundle, write_index
from .config import PCAConfig
from .dataset import Dataset

log = logging.getLogger(__name__)


@dataclass
class Providers:
    enhancer: EnhancerSpec
    extractor: object
    encoder: object
    captions: object
    template: chat_mod.PromptTemplate
    explanations: dict | None = None


def resolve_providers(cfg: PCAConfig, data: Dataset) -> Providers:
    k = cfg.knowledge
    enh = dict(k.enhancer)
    if enh.get("source") is not None and not Path(enh["source"]).is_absolute():
        enh["source"] = str(data.root / enh["source"])
    try:
        enhancer = EnhancerSpec(**enh)
        extractor = resolve_extractor(VisualExtractorSpec(**k.extractor), data.class_count)
        encoder = chat_mod.resolve_encoder(chat_mod.TextEncoderSpec(**k.text_encoder))
        template = chat_mod.PromptTemplate(**k.template)
    except TypeError as e:
        raise ConfigurationError(f"bad knowledge provider settings: {e}") from None
    if k.captions == "file":
        captions = chat_mod.FileCaptionProvider.from_file(data.root / "captions.json")
    else:
        captions = chat_mod.MockCaptionProvider(k.caption_seed)
    explanations = chat_mod.load_json_map(data.root / "explanations.json") if k.use_explanations else None
    return Providers(enhancer, extractor, encoder, captions, template, explanations)


def knowledge_for_sample(data: Dataset, sample_id: str, cfg: PCAConfig, providers: Providers,
                         label_mode: str) -> KnowledgeBundle:
    clip = data.clip(sample_id)
    percept = extract_visual_knowledge(enhance(clip, providers.enhancer), providers.extractor,
                                       label_mode, data.class_count)
    text = chat_mod.chat(percept.s, sample_id, sigma=cfg.train.sigma, label_names=data.label_names,
                         caption_provider=providers.captions, encoder=providers.encoder,
                         template=providers.template, label_mode=label_mode,
                         explanations=providers.explanations)
    return KnowledgeBundle(sample_id, percept.f_v, percept.s, text.text, text.f_t.astype(np.float32),
                           text.source)


def build_knowledge_cache(data_dir: str | Path, cfg: PCAConfig, out: str | Path,
                          workers: int = 1) -> KnowledgeCache:
    """Write one bundle per sample of every split, then the index.

    Rebuilding into a cache made with the same settings rewrites identical
    bytes; a cache made with different settings is refused.
    """
    data = Dataset(data_dir)
    label_mode = cfg.train.label_mode or data.label_mode
    chash = cfg.cache_hash(label_mode)
    out = Path(out)
    if (out / INDEX).is_file():
        existing = KnowledgeCache.open(out).config_hash
        if existing not in (None, chash):
            raise ConfigurationError(f"cache {out} holds config hash {existing}, not {chash}; "
                                     "use a fresh directory")
    out.mkdir(parents=True, exist_ok=True)
    providers = resolve_providers(cfg, data)
    samples = data.all_samples()

    def one(item):
        split, sample = item
        try:
            bundle = knowledge_for_sample(data, sample.sample_id, cfg, providers, label_mode)
        except MissingAssetError as e:
            raise MissingAssetError(f"sample {sample.sample_id}: {e}") from None
        bundle.labels = data.label_vector(sample.labels)
        bundle.split = split
        return write_bundle(out, bundle, chash)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(one, samples))
    else:
        records = [one(item) for item in samples]
    write_index(out, records)
    log.info("knowledge cache: %d samples -> %s (hash %s)", len(records), out, chash)
    return KnowledgeCache.open(out)
