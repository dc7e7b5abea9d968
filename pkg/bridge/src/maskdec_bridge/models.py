"""Mask-predictor backends for the worker.

A backend answers two questions: what vocabulary it generates over, and,
for a partially committed response, the top-1 token and confidence at
each masked position in a range. Greedy only: no sampling anywhere, so
worker output is reproducible run to run.

``mock`` is a self-contained deterministic model for tests and protocol
work. ``hf:<repo-or-path>`` wraps a masked diffusion LM checkpoint via
transformers; it is loaded lazily and only when requested.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, Sequence


@dataclass(frozen=True)
class ModelMeta:
    vocab_size: int
    mask_id: int
    eos_id: int
    name: str


class MaskModel(Protocol):
    def meta(self) -> ModelMeta: ...

    def predict(
        self,
        prompt: Sequence[int],
        cells: Sequence[Optional[int]],
        block: tuple[int, int],
    ) -> list[tuple[int, int, float]]: ...


_M64 = (1 << 64) - 1


def _mix(x: int) -> int:
    x &= _M64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _M64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _M64
    x ^= x >> 31
    return x


class MockModel:
    """Deterministic stand-in with context-coupled confidence.

    Confidence rises with the revealed fraction of a small window around
    each position, so parallel schedulers driven through the bridge see
    non-trivial structure; the predicted token is a hash of (seed,
    position, prompt) over the non-reserved vocabulary.
    """

    VOCAB_SIZE = 34
    MASK_ID = 0
    EOS_ID = 1
    WINDOW = 4

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._usable = [
            t for t in range(self.VOCAB_SIZE) if t not in (self.MASK_ID, self.EOS_ID)
        ]

    def meta(self) -> ModelMeta:
        return ModelMeta(
            vocab_size=self.VOCAB_SIZE,
            mask_id=self.MASK_ID,
            eos_id=self.EOS_ID,
            name=f"mock(seed={self.seed})",
        )

    def predict(self, prompt, cells, block):
        lo, hi = block
        k, total = len(prompt), len(prompt) + len(cells)
        committed = sum(1 for c in cells if c is not None)
        rows = []
        for pos in range(lo, hi):
            if cells[pos] is not None:
                continue
            a = k + pos
            revealed = in_range = 0
            for j in range(max(0, a - self.WINDOW), min(total, a + self.WINDOW + 1)):
                if j == a:
                    continue
                in_range += 1
                if j < k or cells[j - k] is not None:
                    revealed += 1
            density = revealed / in_range if in_range else 0.0
            h = _mix(self.seed ^ _mix(pos * 7919 + committed))
            jitter = ((h >> 16) % 1000) / 10_000.0  # [0, 0.1)
            conf = min(0.995, max(0.05, 0.35 + 0.6 * density + jitter))
            tok = self._usable[_mix(self.seed ^ _mix(pos * 104729 + 1)) % len(self._usable)]
            rows.append((pos, tok, round(conf, 9)))
        return rows


class HFModel:
    """Masked-diffusion checkpoint behind the same predict surface.

    One forward pass over prompt+response (masked cells as the mask
    token); per masked position the argmax token and its softmax mass.
    Requires the ``real`` extra (torch + transformers).
    """

    def __init__(self, repo: str, mask_token: Optional[str] = None, device: str = "cpu"):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise RuntimeError(
                "hf backend needs torch and transformers (pip install 'maskdec-bridge[real]')"
            ) from exc
        self._torch = torch
        self.device = device
        self.tokenizer = AutoTokenizer.from_pretrained(repo, trust_remote_code=True)
        self.model = (
            AutoModel.from_pretrained(repo, trust_remote_code=True).to(device).eval()
        )
        self.repo = repo
        mask = mask_token or self.tokenizer.mask_token
        if mask is None:
            raise RuntimeError(f"{repo}: tokenizer declares no mask token; pass one explicitly")
        self.mask_id = self.tokenizer.convert_tokens_to_ids(mask)
        self.eos_id = self.tokenizer.eos_token_id
        if self.eos_id is None:
            raise RuntimeError(f"{repo}: tokenizer declares no eos token")

    def meta(self) -> ModelMeta:
        return ModelMeta(
            vocab_size=len(self.tokenizer),
            mask_id=self.mask_id,
            eos_id=self.eos_id,
            name=self.repo,
        )

    def predict(self, prompt, cells, block):
        torch = self._torch
        ids = list(prompt) + [self.mask_id if c is None else c for c in cells]
        x = torch.tensor([ids], dtype=torch.long, device=self.device)
        with torch.no_grad():
            logits = self.model(x).logits[0]
        probs = torch.softmax(logits.double(), dim=-1)
        k = len(prompt)
        lo, hi = block
        rows = []
        for pos in range(lo, hi):
            if cells[pos] is not None:
                continue
            dist = probs[k + pos]
            conf, tok = dist.max(dim=-1)
            rows.append((pos, int(tok), float(conf)))
        return rows


def load_model(descriptor: str, seed: int = 0) -> MaskModel:
    """``mock`` | ``mock:<seed>`` | ``hf:<repo-or-path>``."""
    name, _, arg = descriptor.partition(":")
    if name == "mock":
        return MockModel(seed=int(arg) if arg else seed)
    if name == "hf":
        if not arg:
            raise ValueError("hf backend needs a repo or path: hf:<repo>")
        return HFModel(arg)
    raise ValueError(f"unknown model descriptor {descriptor!r}")
