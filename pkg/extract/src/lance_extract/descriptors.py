"""Domain-descriptor list generation.

Offline mode serves the shipped 200-entry static list; online mode prompts
a chat-completion endpoint to enumerate visual domains and post-processes
the reply into deduplicated, lowercased one-per-line phrases. An endpoint
failure leaves no partial file behind.
"""

from __future__ import annotations

import json
import logging
import os
import urllib.request
from importlib import resources
from pathlib import Path

log = logging.getLogger("lance_extract")

PROMPT_PRESETS = {
    "visual-domains": "Please list visual domains in short phrases as much as possible.",
}


class DescriptorError(RuntimeError):
    pass


def static_descriptors() -> list[str]:
    text = resources.files("lance_extract").joinpath(
        "data/descriptors_static.txt").read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


def _clean(lines, n: int) -> list[str]:
    out = []
    seen = set()
    dropped = 0
    for line in lines:
        phrase = line.strip().strip("-*").strip().lower()
        # tolerate numbered-list replies
        if phrase[:2].rstrip(".").isdigit():
            phrase = phrase.split(".", 1)[-1].strip()
        if not phrase:
            continue
        if phrase in seen:
            dropped += 1
            continue
        seen.add(phrase)
        out.append(phrase)
        if len(out) >= n:
            break
    if dropped:
        log.warning("dropped %d duplicate descriptors", dropped)
    return out


def _query_endpoint(prompt: str) -> list[str]:
    base = os.environ.get("LLM_BASE_URL", "https://api.openai.com/v1")
    key = os.environ.get("LLM_API_KEY") or os.environ.get("OPENAI_API_KEY")
    model = os.environ.get("LLM_MODEL", "gpt-3.5-turbo")
    if not key:
        raise DescriptorError("no LLM_API_KEY/OPENAI_API_KEY configured; "
                              "use --offline for the shipped list")
    body = json.dumps({
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
    }).encode("utf-8")
    request = urllib.request.Request(
        f"{base.rstrip('/')}/chat/completions", data=body,
        headers={"Content-Type": "application/json",
                 "Authorization": f"Bearer {key}"})
    try:
        with urllib.request.urlopen(request, timeout=120) as response:
            reply = json.loads(response.read().decode("utf-8"))
        content = reply["choices"][0]["message"]["content"]
    except Exception as exc:
        raise DescriptorError(f"descriptor endpoint failed: {exc}") from exc
    return content.replace(",", "\n").splitlines()


def generate_descriptors(n: int, prompt_preset: str = "visual-domains",
                         offline: bool = False, out_path=None) -> list[str]:
    """Produce <= n descriptor phrases; write them if out_path is given."""
    if n < 1:
        raise DescriptorError("n must be >= 1")
    if prompt_preset not in PROMPT_PRESETS:
        raise DescriptorError(f"unknown prompt preset {prompt_preset!r}")
    if offline:
        entries = static_descriptors()[:n]
    else:
        entries = _clean(_query_endpoint(PROMPT_PRESETS[prompt_preset]), n)
        if not entries:
            raise DescriptorError("endpoint returned no usable descriptors")
    if out_path is not None:
        Path(out_path).write_text("\n".join(entries) + "\n", encoding="utf-8")
    return entries
