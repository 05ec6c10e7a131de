"""Description enrichment: fixed templates, synonym templates, and LLM Q&A generation.

Each category label gets expanded into many natural-language descriptions:
template substitutions, a synonym sentence fed from a user-supplied synonym
table, and detailed answers requested from a chat-completion endpoint. LLM
responses are cached on disk keyed by (model, prompt) so repeated runs are
offline and deterministic.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import requests

from .corpus import CategoryEntry, Corpus
from .errors import SchemaError, TransportError, UnparseableResponseError
from .fileio import atomic_write_text

CLS_SLOT = "{CLS}"
SYN_SLOT = "{SYN}"

DEFAULT_TEMPLATES = (
    "The point cloud of a {CLS}.",
    "A photo of a {CLS} in an indoor room.",
)

SCENE_TEMPLATE = "This is a 3D indoor room, and the room type is a {CLS}"

SYNONYM_TEMPLATE = "A {CLS}, also sometimes called a {SYN}."

DEFAULT_PERSPECTIVES = (
    "Describe what a {} looks like.",
    "Visually describe a {}.",
    "How can you identify a {}?",
    "Provide a visual analysis of a {} and its key components.",
    "Can you provide a detailed description of the {}'s physical appearance?",
    "What are the distinguishing features of a {}?",
    "A caption of a photo of a {}.",
)

#: Parsed answer lines shorter than this are treated as noise.
MIN_DESCRIPTION_CHARS = 8


@dataclass(frozen=True)
class PromptTemplate:
    """A sentence pattern with one {CLS} slot (and optionally a {SYN} slot)."""

    pattern: str

    def __post_init__(self):
        if self.pattern.count(CLS_SLOT) != 1:
            raise SchemaError(f"template must contain {CLS_SLOT} exactly once: {self.pattern!r}")

    @property
    def needs_synonym(self) -> bool:
        return SYN_SLOT in self.pattern

    def render(self, category: str, synonym: str | None = None) -> str:
        text = self.pattern.replace(CLS_SLOT, category)
        if self.needs_synonym:
            if synonym is None:
                raise SchemaError(f"template {self.pattern!r} needs a synonym for {category!r}")
            text = text.replace(SYN_SLOT, synonym)
        return text


@dataclass(frozen=True)
class EnrichmentConfig:
    target_count: int = 15
    templates: tuple[PromptTemplate, ...] = tuple(PromptTemplate(p) for p in DEFAULT_TEMPLATES)
    perspectives: tuple[str, ...] = DEFAULT_PERSPECTIVES
    endpoint: str = "http://localhost:8080/v1/chat/completions"
    model_name: str = "gpt-3.5-turbo"
    api_key_env: str = "TEXTSUP_API_KEY"
    auth_header: str = "Authorization"
    temperature: float = 0.7
    max_retries: int = 3
    backoff_base: float = 0.5
    cache_dir: Path | None = None

    def __post_init__(self):
        if self.target_count < 1:
            raise SchemaError(f"target_count must be >= 1, got {self.target_count}")
        if self.max_retries < 0:
            raise SchemaError(f"max_retries must be >= 0, got {self.max_retries}")


@dataclass(frozen=True)
class GenerationRecord:
    category: str
    request_prompt: str
    raw_response: str
    parsed_descriptions: tuple[str, ...]
    timestamp: str


class LLMTransport(Protocol):
    """Anything that can turn a chat-completion payload into response text."""

    def send(self, payload: dict) -> str: ...


class HttpChatTransport:
    """POSTs the standard chat-completion body and extracts the reply content."""

    def __init__(self, endpoint: str, api_key_env: str, auth_header: str = "Authorization", timeout: float = 60.0):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.auth_header = auth_header
        self.timeout = timeout

    def send(self, payload: dict) -> str:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise TransportError(f"environment variable {self.api_key_env} is not set")
        headers = {self.auth_header: f"Bearer {key}", "Content-Type": "application/json"}
        try:
            response = requests.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"request to {self.endpoint} failed: {exc}") from exc
        if response.status_code != 200:
            raise TransportError(f"{self.endpoint} returned HTTP {response.status_code}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed chat-completion response: {exc}") from exc


def expand_templates(
    categories: Sequence[str],
    templates: Sequence[PromptTemplate],
    synonyms: Mapping[str, str] | None = None,
) -> Corpus | None:
    """One description per (category, template), {CLS} substituted verbatim.

    Templates with a {SYN} slot are rendered from the synonym table and
    tagged "synonym"; plain templates are tagged "template". Returns None
    for an empty category list (an empty corpus has no valid form).
    """
    synonyms = synonyms or {}
    entries = []
    for name in categories:
        descriptions: list[str] = []
        tags: list[str] = []
        for tpl in templates:
            if tpl.needs_synonym:
                if name not in synonyms:
                    raise SchemaError(f"no synonym provided for category {name!r}")
                descriptions.append(tpl.render(name, synonyms[name]))
                tags.append("synonym")
            else:
                descriptions.append(tpl.render(name))
                tags.append("template")
        entries.append(CategoryEntry(name, tuple(descriptions), tuple(tags)))
    if not entries:
        return None
    return Corpus(tuple(entries))


def build_instruction(
    categories: Sequence[str],
    target: str,
    perspectives: Sequence[str] = DEFAULT_PERSPECTIVES,
    n: int = 15,
) -> str:
    """Render the full Q&A-style generation instruction for one category."""
    if target not in categories:
        raise ValueError(f"target {target!r} is not one of the listed categories")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    lines = [
        f"There are {len(categories)} semantic categories in indoor scenes as follows:",
        '"' + ", ".join(categories) + '."',
        "",
        "Do you know how to distinguish them? You can consider from the following perspectives:",
    ]
    lines += [f"- {p}" for p in perspectives]
    lines.append(f'Please generate {n} descriptions for the "{target}".')
    return "\n".join(lines)


def parse_response(raw: str) -> list[str]:
    """Pull description sentences out of a numbered / bulleted answer.

    Accepts "#k", "k.", "k)" and "-" line markers; unmarked lines count
    too. Lines shorter than MIN_DESCRIPTION_CHARS after stripping markers
    are dropped.
    """
    out: list[str] = []
    for line in raw.splitlines():
        text = line.strip()
        if not text:
            continue
        if text.startswith("#"):
            text = text.lstrip("#")
            text = text.lstrip("0123456789").strip()
        elif text.startswith("-"):
            text = text[1:].strip()
        else:
            head = text.split(" ", 1)[0]
            if head and head.rstrip(".)").isdigit() and head != text:
                text = text.split(" ", 1)[1].strip()
        if len(text) >= MIN_DESCRIPTION_CHARS:
            out.append(text)
    return out


def _cache_path(cache_dir: Path, model_name: str, prompt: str) -> Path:
    digest = hashlib.sha256((model_name + prompt).encode("utf-8")).hexdigest()
    return cache_dir / f"{digest}.txt"


def generate_descriptions(
    category: str,
    config: EnrichmentConfig,
    transport: LLMTransport,
    context_categories: Sequence[str] | None = None,
) -> GenerationRecord:
    """Ask the endpoint for detailed descriptions of one category.

    The raw response is cached under sha256(model + prompt); a cache hit
    answers without touching the transport. Transport failures retry up to
    max_retries times with exponential backoff.
    """
    context = list(context_categories) if context_categories else [category]
    if category not in context:
        raise ValueError(f"category {category!r} missing from its own context list")
    prompt = build_instruction(context, category, config.perspectives, config.target_count)
    payload = {
        "model": config.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": config.temperature,
    }

    raw: str | None = None
    cache_file = None
    if config.cache_dir is not None:
        cache_file = _cache_path(Path(config.cache_dir), config.model_name, prompt)
        if cache_file.exists():
            raw = cache_file.read_text(encoding="utf-8")

    if raw is None:
        attempt = 0
        while True:
            try:
                raw = transport.send(payload)
                break
            except TransportError:
                if attempt >= config.max_retries:
                    raise
                time.sleep(config.backoff_base * (2**attempt))
                attempt += 1
        if cache_file is not None:
            atomic_write_text(cache_file, raw)

    parsed = parse_response(raw)[: config.target_count]
    if not parsed:
        raise UnparseableResponseError(f"no descriptions parsed for category {category!r}")
    return GenerationRecord(
        category=category,
        request_prompt=prompt,
        raw_response=raw,
        parsed_descriptions=tuple(parsed),
        timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(),
    )


def assemble_corpus(parts: Sequence[Corpus]) -> Corpus:
    """Merge per-source corpora over one shared category set.

    Descriptions concatenate in part order; exact duplicate strings keep
    their first occurrence (and its source tag).
    """
    if not parts:
        raise SchemaError("no corpus parts to assemble")
    base_names = parts[0].names
    for i, part in enumerate(parts[1:], start=1):
        if set(part.names) != set(base_names):
            raise SchemaError(f"part {i} has a different category set than part 0")
    entries = []
    for name in base_names:
        descriptions: list[str] = []
        tags: list[str] = []
        seen: set[str] = set()
        for part in parts:
            entry = part.categories[part.names.index(name)]
            for desc, tag in zip(entry.descriptions, entry.source_tags):
                if desc in seen:
                    continue
                seen.add(desc)
                descriptions.append(desc)
                tags.append(tag)
        entries.append(CategoryEntry(name, tuple(descriptions), tuple(tags)))
    return Corpus(tuple(entries))


def enrich_corpus(
    categories: Sequence[str],
    config: EnrichmentConfig,
    transport: LLMTransport | None = None,
    synonyms: Mapping[str, str] | None = None,
    max_workers: int = 4,
) -> Corpus:
    """Full enrichment: templates (+synonyms), then LLM generation up to target_count.

    Generation for distinct categories runs on a small thread pool; results
    are assembled in category order so the output is independent of
    completion order. With no transport, templates are all you get.
    """
    template_part = expand_templates(categories, config.templates, synonyms)
    if template_part is None:
        raise SchemaError("cannot enrich an empty category list")
    parts = [template_part]
    if synonyms:
        # a synonym table must cover every category (expand_templates raises
        # naming the first one it cannot render)
        parts.append(
            expand_templates(categories, (PromptTemplate(SYNONYM_TEMPLATE),), synonyms)
        )

    if transport is not None:
        remaining = max(1, config.target_count - sum(
            len(p.categories[0].descriptions) for p in parts
        ))
        gen_config = replace(config, target_count=remaining)
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            records = list(
                pool.map(
                    lambda name: generate_descriptions(name, gen_config, transport, categories),
                    categories,
                )
            )
        entries = tuple(
            CategoryEntry(
                rec.category,
                rec.parsed_descriptions,
                ("generated",) * len(rec.parsed_descriptions),
            )
            for rec in records
        )
        parts.append(Corpus(entries))
    return assemble_corpus(parts)
