"""Prompt templates for every helper role.

Templates are plain text files with one ``$input`` placeholder, rendered with
the role's inputs as pretty-printed, key-sorted JSON between ``<input>`` tags.
Repair and re-ask rounds append a ``<feedback>`` block. A directory of
same-named files can replace the packaged templates.
"""

from __future__ import annotations

import json
import re
import string
from importlib import resources
from pathlib import Path
from typing import Any

_INPUT = re.compile(r"<input>\n(.*?)\n</input>", re.DOTALL)
_FEEDBACK = re.compile(r"<feedback>\n(.*?)\n</feedback>", re.DOTALL)


def _pretty(value: Any) -> str:
    return json.dumps(value, indent=2, sort_keys=True, ensure_ascii=False)


class PromptLibrary:
    def __init__(self, template_dir: str | Path | None = None):
        self.template_dir = Path(template_dir) if template_dir else None
        self._cache: dict[str, string.Template] = {}

    def template(self, role: str) -> string.Template:
        if role not in self._cache:
            if self.template_dir is not None and (self.template_dir / f"{role}.txt").exists():
                text = (self.template_dir / f"{role}.txt").read_text()
            else:
                text = resources.files("toolsim.templates").joinpath(f"{role}.txt").read_text()
            self._cache[role] = string.Template(text)
        return self._cache[role]

    def render(self, role: str, payload: dict[str, Any], feedback: Any = None) -> str:
        text = self.template(role).substitute(input=_pretty(payload))
        if feedback is not None:
            text = text.rstrip("\n") + "\n\n<feedback>\n" + _pretty(feedback) + "\n</feedback>\n"
        return text


def extract(prompt: str) -> tuple[dict[str, Any], Any]:
    """Recover (payload, feedback) from a rendered prompt."""
    match = _INPUT.search(prompt)
    payload = json.loads(match.group(1)) if match else {}
    fb = _FEEDBACK.search(prompt)
    return payload, (json.loads(fb.group(1)) if fb else None)


DEFAULT = PromptLibrary()
