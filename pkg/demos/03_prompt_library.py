"""
Prompt library for white blood cell classes
===========================================

Each class gets a morphology-aware text prompt assembled from a fixed
phrase list, so generation requests are reproducible down to the byte.
The library validates against a class registry and round-trips through
JSON for hand editing.
"""

from pathlib import Path

from cytodiff import (
    build_registry,
    default_library,
    load_library,
    save_library,
    validate_library,
)
from cytodiff.prompts import WBC_CLASS_NAMES

out_dir = Path(__file__).parent / "output" / "prompt_library"
out_dir.mkdir(parents=True, exist_ok=True)

library = default_library()
print(f"library {library.version} covers {len(library.templates)} classes\n")

# Rendered prompts are comma-joined phrase lists: subject, staining
# context, class-specific morphology, shared style suffix.
for name in ("basophil", "monocyte", "smudge_cell"):
    print(f"{name}:")
    print(f"  {library.render(name)}\n")

# Validation checks coverage against a registry: missing classes, empty
# templates, and duplicate renderings are all reported.
registry = build_registry(WBC_CLASS_NAMES)
report = validate_library(library, registry)
print("validation:", report.describe())

# Libraries persist as plain JSON so domain experts can tune wording;
# a reload sees exactly what was saved.
path = out_dir / "library.json"
save_library(library, path)
reloaded = load_library(path, registry)
print("round trip version:", reloaded.version)
print("rendering stable:", reloaded.render("basophil") == library.render("basophil"))
