"""Per-class text prompts: morphological descriptor phrases that drive both
class-conditional image generation and the contrastive prompt classifier.

Prompts are flat ordered phrase lists rendered by comma-joining. The default
library covers the 15 standard single white blood cell classes; apart from
the basophil entry, which follows the published wording for that class, the
descriptors are editable defaults written from common cytomorphology usage
and carry no canonical status.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .dataset import ClassLabel, build_registry, registry_names
from .errors import ConfigError, DataError

DEFAULT_LIBRARY_VERSION = "builtin-1"

#: The 15 white blood cell classes the default prompt library covers.
WBC_CLASS_NAMES = (
    "atypical_lymphocyte",
    "band_neutrophil",
    "basophil",
    "bilobed_promyelocyte",
    "eosinophil",
    "erythroblast",
    "metamyelocyte",
    "monoblast",
    "monocyte",
    "myeloblast",
    "myelocyte",
    "promyelocyte",
    "segmented_neutrophil",
    "smudge_cell",
    "typical_lymphocyte",
)

_STYLE_PREAMBLE = ("peripheral blood smear",)
_STYLE_SUFFIX = (
    "surrounded by red blood cells",
    "medical cytology",
    "high detail",
    "clinical pathology",
    "Wright-Giemsa stain",
    "white background",
    "soft lighting",
    "40x magnification",
    "ultra-detailed",
    "sharp focus",
    "macro lens",
)

_MORPHOLOGY: dict[str, tuple[str, ...]] = {
    "basophil": (
        "large bilobed nucleus",
        "dark blue-purple granules densely packed in cytoplasm",
    ),
    "erythroblast": (
        "small round nucleus with dense dark chromatin",
        "deeply basophilic cytoplasm",
        "nucleated red cell precursor",
    ),
    "eosinophil": (
        "bilobed nucleus",
        "large orange-red granules filling the cytoplasm",
    ),
    "smudge_cell": (
        "ruptured cell with smeared chromatin",
        "no intact cytoplasm",
        "amorphous nuclear remnant",
    ),
    "atypical_lymphocyte": (
        "enlarged irregular nucleus",
        "abundant pale blue cytoplasm hugging adjacent red cells",
    ),
    "typical_lymphocyte": (
        "small round cell with dense dark nucleus",
        "thin rim of pale blue cytoplasm",
    ),
    "metamyelocyte": (
        "indented kidney-shaped nucleus",
        "pink cytoplasm with fine granules",
    ),
    "monoblast": (
        "large round nucleus with fine lacy chromatin",
        "prominent nucleoli",
        "abundant blue-gray cytoplasm with fine vacuoles",
    ),
    "monocyte": (
        "large folded horseshoe-shaped nucleus",
        "gray-blue ground-glass cytoplasm",
        "scattered fine vacuoles",
    ),
    "myelocyte": (
        "round eccentric nucleus with condensing chromatin",
        "pink-tan cytoplasm with primary granules",
    ),
    "myeloblast": (
        "high nucleus to cytoplasm ratio",
        "fine open chromatin with distinct nucleoli",
        "scant agranular basophilic cytoplasm",
    ),
    "band_neutrophil": (
        "curved band-shaped nucleus without segmentation",
        "pale pink cytoplasm with fine neutrophilic granules",
    ),
    "segmented_neutrophil": (
        "nucleus with three to five lobes joined by thin strands",
        "pale pink cytoplasm with fine granules",
    ),
    "bilobed_promyelocyte": (
        "two prominent nuclear lobes",
        "intensely granulated cytoplasm with azurophilic granules",
    ),
    "promyelocyte": (
        "large cell with round eccentric nucleus",
        "abundant azurophilic primary granules",
        "paranuclear clear zone",
    ),
}


@dataclass
class PromptTemplate:
    """Ordered descriptor phrases for one class."""

    label: ClassLabel
    phrases: tuple[str, ...]

    def render(self) -> str:
        return render_prompt(self)


def render_prompt(template: PromptTemplate) -> str:
    """Comma-join the phrase list; deterministic and idempotent."""
    if not template.phrases:
        raise ConfigError(f"template for {template.label.name!r} has no phrases")
    return ", ".join(template.phrases)


def default_phrases(class_name: str) -> tuple[str, ...]:
    """Subject phrase + style preamble + morphology + shared style suffix."""
    if class_name not in _MORPHOLOGY:
        raise ConfigError(f"no default prompt for class {class_name!r}")
    subject = f"Photorealistic {class_name.replace('_', ' ')} under microscope"
    return (subject, *_STYLE_PREAMBLE, *_MORPHOLOGY[class_name], *_STYLE_SUFFIX)


def generic_phrases(class_name: str) -> tuple[str, ...]:
    """Style-only prompt for classes without curated morphology phrases."""
    subject = f"Photorealistic {class_name.replace('_', ' ')} under microscope"
    return (subject, *_STYLE_PREAMBLE, *_STYLE_SUFFIX)


@dataclass
class PromptLibrary:
    """One template per class, plus a version tag for provenance."""

    templates: dict[str, PromptTemplate]
    version: str = DEFAULT_LIBRARY_VERSION

    def template_for(self, class_name: str) -> PromptTemplate:
        if class_name not in self.templates:
            raise DataError(f"prompt library has no template for class {class_name!r}")
        return self.templates[class_name]

    def render(self, class_name: str) -> str:
        return render_prompt(self.template_for(class_name))


def default_library(registry: Sequence[ClassLabel] | None = None) -> PromptLibrary:
    """The built-in library; covers the 15 standard classes unless a
    registry narrows it."""
    if registry is None:
        registry = build_registry(WBC_CLASS_NAMES)
    templates = {
        c.name: PromptTemplate(label=c, phrases=default_phrases(c.name)) for c in registry
    }
    return PromptLibrary(templates=templates, version=DEFAULT_LIBRARY_VERSION)


def library_for_registry(registry: Sequence[ClassLabel]) -> PromptLibrary:
    """Curated phrases where known, generic style phrases for other classes."""
    templates = {}
    all_curated = True
    for c in registry:
        if c.name in _MORPHOLOGY:
            phrases = default_phrases(c.name)
        else:
            phrases = generic_phrases(c.name)
            all_curated = False
        templates[c.name] = PromptTemplate(label=c, phrases=phrases)
    version = DEFAULT_LIBRARY_VERSION if all_curated else f"{DEFAULT_LIBRARY_VERSION}+generic"
    return PromptLibrary(templates=templates, version=version)


@dataclass
class LibraryValidation:
    """Report from validating a library against a class registry."""

    missing: tuple[str, ...] = ()
    empty: tuple[str, ...] = ()
    duplicates: tuple[tuple[str, str], ...] = ()

    @property
    def ok(self) -> bool:
        return not (self.missing or self.empty or self.duplicates)

    def describe(self) -> str:
        if self.ok:
            return "prompt library valid"
        parts = []
        if self.missing:
            parts.append(f"missing templates: {list(self.missing)}")
        if self.empty:
            parts.append(f"empty templates: {list(self.empty)}")
        if self.duplicates:
            parts.append(f"duplicate renderings: {list(self.duplicates)}")
        return "; ".join(parts)


def validate_library(
    library: PromptLibrary, registry: Sequence[ClassLabel]
) -> LibraryValidation:
    """Check coverage, nonemptiness, and pairwise-distinct renderings."""
    missing = tuple(c.name for c in registry if c.name not in library.templates)
    empty = tuple(
        c.name
        for c in registry
        if c.name in library.templates and not library.templates[c.name].phrases
    )
    rendered: dict[str, str] = {}
    duplicates: list[tuple[str, str]] = []
    for c in registry:
        t = library.templates.get(c.name)
        if t is None or not t.phrases:
            continue
        text = render_prompt(t)
        if text in rendered:
            duplicates.append((rendered[text], c.name))
        else:
            rendered[text] = c.name
    return LibraryValidation(missing=missing, empty=empty, duplicates=tuple(duplicates))


# ---------------------------------------------------------------------------
# Serialization: JSON map class_name -> phrase list, plus a version field.


def save_library(library: PromptLibrary, path: str | Path) -> None:
    payload = {
        "version": library.version,
        "prompts": {name: list(t.phrases) for name, t in sorted(library.templates.items())},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_library(path: str | Path, registry: Sequence[ClassLabel] | None = None) -> PromptLibrary:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"prompt file {path} is not valid JSON: {exc}") from exc
    if "prompts" not in payload or "version" not in payload:
        raise DataError(f"prompt file {path} must carry 'version' and 'prompts'")
    names = sorted(payload["prompts"])
    if registry is None:
        registry = build_registry(names)
    by_name = {c.name: c for c in registry}
    templates = {}
    for name, phrases in payload["prompts"].items():
        label = by_name.get(name, ClassLabel(name=name, index=-1))
        templates[name] = PromptTemplate(label=label, phrases=tuple(phrases))
    return PromptLibrary(templates=templates, version=str(payload["version"]))
