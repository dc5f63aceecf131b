"""Deterministic stand-in for a chat-completion service.

Used to record replay fixtures and to run the synthesis stage offline. Answers are
derived from the reference embedded in the prompt: the generator corrupts a share of
the reference tokens and each critic turn repairs half of what is still wrong. A small,
hash-selected share of generator turns returns untagged text.
"""

from __future__ import annotations

import hashlib
import json
import re

import httpx

_BLOCK = {
    name: re.compile(rf"<{name}>\n?(.*?)\n?</{name}>", re.S)
    for name in ("reference", "result", "key concepts", "translation task")
}
_TEMPLATE = re.compile(r"<template strategy=\"(\w+)\">\n(.*?)\n</template>", re.S)


def _h(*parts: str) -> int:
    return int.from_bytes(hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()[:8], "big")


def _split(text: str) -> tuple[list[str], str]:
    if " " in text.strip():
        return text.split(), " "
    return [c for c in text if not c.isspace()], ""


def _block(name: str, text: str) -> str | None:
    m = _BLOCK[name].search(text)
    return m.group(1) if m else None


class ScriptedLLM:
    def __init__(self, corrupt: float = 0.5, untagged_every: int = 7, seed: int = 0):
        self.corrupt = corrupt
        self.untagged_every = untagged_every
        self.seed = seed
        self.calls = 0

    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self.handle)

    def handle(self, request: httpx.Request) -> httpx.Response:
        self.calls += 1
        body = json.loads(request.content)
        system = next((m["content"] for m in body["messages"] if m["role"] == "system"), "")
        user = next(m["content"] for m in body["messages"] if m["role"] == "user")
        text = self.reply(system, user)
        usage = {"prompt_tokens": len(user.split()), "completion_tokens": len(text.split())}
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}], "usage": usage})

    def reply(self, system: str, user: str) -> str:
        if "<translation task>" in user and "<reference>" not in user:
            return self._concepts(user)
        if "<Translation Process>" in user:
            return self._critic(user)
        return self._generate(user)

    def _concepts(self, user: str) -> str:
        task = _block("translation task", user) or user
        source = task.split("\n", 1)[-1]
        tokens, _ = _split(source)
        ranked = sorted(set(tokens), key=lambda t: (-len(t), t))[:3]
        return "<key concepts>\n" + "\n".join(f"- {t}" for t in ranked) + "\n</key concepts>"

    def _generate(self, user: str) -> str:
        reference = _block("reference", user) or ""
        if self.untagged_every and _h(str(self.seed), "untagged", user) % self.untagged_every == 0:
            return "I am not able to produce a structured answer for this request."
        tokens, sep = _split(reference)
        out = [
            t if _h(str(self.seed), "corrupt", reference, str(i)) % 1000 >= self.corrupt * 1000 else f"<{i}>"
            for i, t in enumerate(tokens)
        ]
        out = [t.replace("<", "#").replace(">", "#") for t in out]
        m = _TEMPLATE.search(user)
        steps = m.group(2).splitlines() if m else []
        think = "\n".join(f"{line} -> applied to this text." for line in steps) or "Translate directly."
        return f"<think>\n{think}\n</think>\n<answer>{sep.join(out)}</answer>"

    def _critic(self, user: str) -> str:
        reference = _block("reference", user) or ""
        result = _block("result", user) or ""
        ref, sep = _split(reference)
        hyp, _ = _split(result)
        hyp = (hyp + ["#"] * len(ref))[: len(ref)]
        wrong = [i for i, (a, b) in enumerate(zip(hyp, ref)) if a != b]
        for i in wrong[: (len(wrong) + 1) // 2]:
            hyp[i] = ref[i]
        process = re.search(r"<Translation Process>\n(.*?)\n</Translation Process>", user, re.S)
        prior = process.group(1) if process else ""
        think = f"{prior}\nReview: repaired {len(wrong[: (len(wrong) + 1) // 2])} of {len(wrong)} mismatched tokens."
        return f"<think>\n{think}\n</think>\n<answer>{sep.join(hyp)}</answer>"
