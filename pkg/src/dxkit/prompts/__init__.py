"""Versioned prompt-template assets.

Templates are plain text files with str.format placeholders.  The active
version of each template is pinned here; bumping a prompt means adding a
new file and updating the pin, so past pipeline runs stay reproducible.
"""

from __future__ import annotations

from importlib import resources

ACTIVE_VERSIONS = {
    "oracle_fulfill": 1,
    "extract_clinical_info": 1,
    "rewrite_chief_complaint": 1,
    "rephrase_open_question": 1,
    "stepwise_conversion": 1,
    "deep_think": 1,
    "accuracy_judge": 1,
    "score_judge": 1,
    "attribution_judge": 1,
    "perturb_rewrite": 1,
    "usefulness_judge": 1,
}


def load_prompt(name: str, version: int | None = None) -> str:
    if name not in ACTIVE_VERSIONS:
        raise KeyError(f"unknown prompt template {name!r}")
    v = version if version is not None else ACTIVE_VERSIONS[name]
    path = resources.files(__package__).joinpath(f"{name}_v{v}.txt")
    return path.read_text(encoding="utf-8")
