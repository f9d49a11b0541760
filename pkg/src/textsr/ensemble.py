"""Model combination by pixelwise output averaging, selected round by round
with a greedy search.

Round 1 keeps the best single model; round k appends, to the frozen round
k-1 winner, whichever pool model scores best (a model may be picked any
number of times). The final answer is the best round winner overall.
Scoring is pluggable: mean PSNR over an evaluation set, or character
accuracy from an external OCR command.
"""

from __future__ import annotations

import math
import shlex
import subprocess
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .imaging import save_pgm
from .network import Network, predict_image


class GreedySearchError(RuntimeError):
    """Search aborted; .partial_rounds holds the winners found so far."""

    def __init__(self, message: str, partial_rounds=()):
        super().__init__(message)
        self.partial_rounds = list(partial_rounds)


class OcrScorerError(RuntimeError):
    """External OCR command failed; .image_id names the failing image."""

    def __init__(self, message: str, image_id: str = ""):
        super().__init__(message)
        self.image_id = image_id


@dataclass
class EvalItem:
    image_id: str
    lr_upscaled: np.ndarray  # (H, W), [0, 1]
    hr: np.ndarray           # (H, W), [0, 1]
    text: str | None = None


@dataclass(frozen=True)
class Combination:
    """Multiset of model ids whose outputs get averaged."""
    members: tuple[str, ...]

    def __post_init__(self):
        if not self.members:
            raise ValueError("combination must have at least one member")
        object.__setattr__(self, "members", tuple(sorted(self.members)))

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass
class ScoredCombination:
    combination: Combination
    score: float
    scorer_name: str


class ModelPool:
    """Models plus the evaluation set; per-model outputs are computed once
    and cached, so combination scoring is pure array arithmetic.

    `models` maps unique ids to either a Network or a pre-computed list of
    per-eval-image outputs.
    """

    def __init__(self, models, eval_items: list[EvalItem]):
        if isinstance(models, dict):
            models = list(models.items())
        self._models: dict[str, object] = {}
        for model_id, model in models:
            if model_id in self._models:
                raise ValueError(f"duplicate model id {model_id!r}")
            self._models[model_id] = model
        self.eval_items = list(eval_items)
        self._cache: dict[str, list[np.ndarray]] = {}

    def __contains__(self, model_id: str) -> bool:
        return model_id in self._models

    def ids(self) -> list[str]:
        return sorted(self._models)

    def outputs(self, model_id: str) -> list[np.ndarray]:
        """Super-resolved outputs of one model on every eval item."""
        if model_id not in self._models:
            raise KeyError(f"unknown model id {model_id!r}")
        if model_id not in self._cache:
            model = self._models[model_id]
            if isinstance(model, Network):
                outs = [predict_image(model, item.lr_upscaled[None])[0]
                        for item in self.eval_items]
            else:  # stored per-image outputs
                outs = [np.asarray(o, dtype=np.float64) for o in model]
                if len(outs) != len(self.eval_items):
                    raise ValueError(
                        f"model {model_id!r} has {len(outs)} stored outputs "
                        f"for {len(self.eval_items)} eval images")
            self._cache[model_id] = outs
        return self._cache[model_id]


def average_outputs(outputs: list[np.ndarray]) -> np.ndarray:
    """Unweighted pixelwise mean of same-shaped outputs.

    Averaging copies of one output returns that output exactly.
    """
    if not outputs:
        raise ValueError("need at least one output to average")
    arrays = [np.asarray(o, dtype=np.float64) for o in outputs]
    for o in arrays[1:]:
        if o.shape != arrays[0].shape:
            raise ValueError(f"shape mismatch: {o.shape} vs {arrays[0].shape}")
    if all(np.array_equal(o, arrays[0]) for o in arrays[1:]):
        return arrays[0].copy()
    return np.mean(np.stack(arrays), axis=0)


def _averaged_predictions(c: Combination, pool: ModelPool) -> list[np.ndarray]:
    """Per-eval-image mean over the member multiset.

    Members are grouped by id (count * output) so repeats of one model
    reproduce its outputs bit-exactly and duplicated multisets agree.
    """
    counts = Counter(c.members)
    if len(counts) == 1:
        return [o.copy() for o in pool.outputs(c.members[0])]
    sums: list[np.ndarray] | None = None
    for model_id in sorted(counts):
        k = counts[model_id]
        outs = pool.outputs(model_id)
        if sums is None:
            sums = [k * o for o in outs] if k > 1 else [o.copy() for o in outs]
        else:
            for s, o in zip(sums, outs):
                s += k * o if k > 1 else o
    return [s / c.size for s in sums]


def score_combination(c: Combination, pool: ModelPool, scorer) -> float:
    """Average the members' outputs per eval image and apply the scorer."""
    for model_id in set(c.members):
        if model_id not in pool:
            raise KeyError(f"unknown model id {model_id!r}")
    return float(scorer(_averaged_predictions(c, pool), pool.eval_items))


def greedy_search(pool: ModelPool, scorer,
                  max_rounds: int = 14) -> tuple[list[ScoredCombination], ScoredCombination]:
    """Round-by-round greedy combination search.

    Returns (per-round winners, overall best). The round-k winner always has
    exactly k members; ties inside a round go to the smallest candidate model
    id, ties across rounds to the fewest members.
    """
    ids = pool.ids()
    if not ids:
        raise ValueError("model pool is empty")
    if max_rounds < 1:
        raise ValueError(f"max_rounds must be >= 1, got {max_rounds}")
    scorer_name = getattr(scorer, "name", "custom")
    rounds: list[ScoredCombination] = []
    members: tuple[str, ...] = ()
    try:
        for _ in range(max_rounds):
            best: ScoredCombination | None = None
            for model_id in ids:  # ascending id order makes ties deterministic
                candidate = Combination(members + (model_id,))
                score = score_combination(candidate, pool, scorer)
                if math.isnan(score):
                    raise ValueError(f"scorer returned NaN for {candidate.members}")
                if best is None or score > best.score:
                    best = ScoredCombination(candidate, score, scorer_name)
                    best_append = model_id
            members = members + (best_append,)
            rounds.append(best)
    except (OcrScorerError, KeyError, ValueError) as exc:
        raise GreedySearchError(f"scoring failed in round {len(rounds) + 1}: {exc}",
                                partial_rounds=rounds) from exc
    overall = rounds[0]
    for sc in rounds[1:]:  # strict > keeps the earliest (fewest-member) winner on ties
        if sc.score > overall.score:
            overall = sc
    return rounds, overall


class PsnrScorer:
    """Mean PSNR of the averaged outputs against the HR references."""

    name = "psnr"

    def __init__(self, border_mode: str = "keep", peak: float = 255.0):
        self.border_mode = border_mode
        self.peak = peak

    def __call__(self, preds: list[np.ndarray], items: list[EvalItem]) -> float:
        values = [metrics.psnr(p, item.hr, peak=self.peak, border_mode=self.border_mode)
                  for p, item in zip(preds, items)]
        return float(np.mean(values))


def levenshtein(a: str, b: str) -> int:
    """Edit distance (insert/delete/substitute, unit costs)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def char_accuracy(pred: str, truth: str) -> float:
    """Normalized character accuracy: 1 - editdistance / max(len(truth), 1)."""
    return 1.0 - levenshtein(pred, truth) / max(len(truth), 1)


class ExternalCommandScorer:
    """Character accuracy from an external OCR command.

    Each averaged output is written to workdir as a PGM, the command template
    (with an {image} placeholder) is run on it, and its stdout is compared to
    the eval item's ground-truth text. on_error selects whether a failing
    image aborts the scoring ("abort") or is skipped ("skip").
    """

    name = "external"

    def __init__(self, command_template: str, workdir, timeout: float = 30.0,
                 on_error: str = "abort"):
        if "{image}" not in command_template:
            raise ValueError("command template must contain an {image} placeholder")
        if on_error not in ("abort", "skip"):
            raise ValueError(f"on_error must be 'abort' or 'skip', got {on_error!r}")
        self.command_template = command_template
        self.workdir = Path(workdir)
        self.timeout = timeout
        self.on_error = on_error

    def _recognize(self, image_path: Path, image_id: str) -> str:
        cmd = shlex.split(self.command_template.format(image=str(image_path)))
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=self.timeout)
        except FileNotFoundError as exc:
            raise OcrScorerError(f"{image_id}: command not found: {cmd[0]}", image_id) from exc
        except subprocess.TimeoutExpired as exc:
            raise OcrScorerError(f"{image_id}: command timed out after {self.timeout}s",
                                 image_id) from exc
        if proc.returncode != 0:
            raise OcrScorerError(
                f"{image_id}: command exited with {proc.returncode}: {proc.stderr.strip()}",
                image_id)
        return proc.stdout.strip()

    def __call__(self, preds: list[np.ndarray], items: list[EvalItem]) -> float:
        self.workdir.mkdir(parents=True, exist_ok=True)
        scores = []
        for pred, item in zip(preds, items):
            if item.text is None:
                raise OcrScorerError(f"{item.image_id}: no ground-truth text", item.image_id)
            path = self.workdir / f"{item.image_id}.pgm"
            save_pgm(pred, path)
            try:
                recognized = self._recognize(path, item.image_id)
            except OcrScorerError:
                if self.on_error == "abort":
                    raise
                continue
            scores.append(char_accuracy(recognized, item.text))
        if not scores:
            raise OcrScorerError("external scorer produced no successful recognitions")
        return float(np.mean(scores))


def read_ground_truth(path) -> dict[str, str]:
    """Parse `image_id<TAB>text` lines (UTF-8) into a dict."""
    truths: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected image_id<TAB>text")
            image_id, text = line.split("\t", 1)
            truths[image_id] = text
    return truths
