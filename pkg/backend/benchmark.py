"""Four-choice benchmark harness: accuracy ± binomial SE and seconds per answer."""
import asyncio
import json
import re
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import ValidationError

from backend.agents.base_agent import BaseAgent
from backend.agents.reporter import evidence_view
from backend.errors import NoChoiceFound, QuestionParseError
from backend.llm.gateway import LlmBackend
from backend.models import (
    BenchmarkQuestion, BenchmarkResult, Category, CategoryResult, ExecutionOptions,
    QuestionRecord, RoleTag, WeightedEvidence,
)
from backend.pipeline import SearchPipeline, Services
from backend.utils.dates import to_iso
from backend.utils.prompts import PromptLibrary

ANSWER_MARKER = re.compile(r"answer\s*:", re.IGNORECASE)
LETTER_AFTER_MARKER = re.compile(r"^[\s\(\[\*\"']*([A-Da-d])(?![A-Za-z])")
STANDALONE_LETTER = re.compile(r"(?<![A-Za-z])([A-D])(?![A-Za-z])")

# (enable_rewriter, enable_temporal_weighting)
ABLATION_GRID: List[Tuple[bool, bool]] = [(True, True), (False, True), (True, False), (False, False)]

LABEL_WIDTH = 28


def load_questions(path: Path) -> List[BenchmarkQuestion]:
    """
    Read a JSONL question file.

    Every line is checked before failing, so the error lists all bad lines.

    Raises:
        QuestionParseError: one or more malformed lines
    """
    questions: List[BenchmarkQuestion] = []
    problems: Dict[int, str] = {}
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                question = BenchmarkQuestion.model_validate(json.loads(line))
            except json.JSONDecodeError as e:
                problems[lineno] = f"invalid JSON: {e.msg}"
                continue
            except ValidationError as e:
                first = e.errors()[0]
                loc = ".".join(str(part) for part in first["loc"]) or "question"
                problems[lineno] = f"{loc}: {first['msg']}"
                continue
            if question.id in seen:
                problems[lineno] = f"duplicate question id {question.id!r}"
                continue
            seen.add(question.id)
            questions.append(question)
    if problems:
        raise QuestionParseError(problems)
    logger.info("loaded {} questions from {}", len(questions), path)
    return questions


def extract_choice(text: str) -> str:
    """
    The letter after the last "ANSWER:" marker, else the last standalone A-D.

    Raises:
        NoChoiceFound
    """
    markers = list(ANSWER_MARKER.finditer(text))
    if markers:
        match = LETTER_AFTER_MARKER.match(text[markers[-1].end():])
        if match:
            return match.group(1).upper()
    letters = STANDALONE_LETTER.findall(text)
    if letters:
        return letters[-1]
    raise NoChoiceFound(text)


def binomial_accuracy(correct: int, n: int) -> Tuple[float, float]:
    """Accuracy and its binomial standard error, both in percent"""
    p = correct / n
    return 100.0 * p, float(100.0 * np.sqrt(p * (1.0 - p) / n))


def summarize(records: Sequence[QuestionRecord], opts: ExecutionOptions,
              search_enabled: bool = True) -> BenchmarkResult:
    n = len(records)
    if n == 0:
        return BenchmarkResult(n=0, correct=0, options_used=opts, search_enabled=search_enabled)

    correct = sum(1 for r in records if r.correct)
    accuracy, std = binomial_accuracy(correct, n)
    seconds = np.array([r.seconds for r in records], dtype=float)

    per_category: Dict[str, CategoryResult] = {}
    for category in Category:
        group = [r for r in records if r.category == category]
        if not group:
            continue
        group_correct = sum(1 for r in group if r.correct)
        group_accuracy, group_std = binomial_accuracy(group_correct, len(group))
        group_seconds = np.array([r.seconds for r in group], dtype=float)
        per_category[category.value] = CategoryResult(
            n=len(group), correct=group_correct, accuracy_pct=group_accuracy, std_pct=group_std,
            mean_seconds=float(group_seconds.mean()), std_seconds=float(group_seconds.std()),
        )

    return BenchmarkResult(
        n=n,
        correct=correct,
        unparsed=sum(1 for r in records if r.unparsed),
        accuracy_pct=accuracy,
        std_pct=std,
        mean_seconds=float(seconds.mean()),
        std_seconds=float(seconds.std()),
        per_category=per_category,
        options_used=opts,
        search_enabled=search_enabled,
        records=list(records),
    )


class AnswererAgent(BaseAgent):
    """Answers a four-choice question from weighted evidence"""

    def __init__(self, llm: LlmBackend, prompts: PromptLibrary, max_output: int = 512):
        super().__init__(RoleTag.ANSWERER, "Answerer Agent", llm, prompts, max_output)

    def answer(self, question: BenchmarkQuestion, items: Sequence[WeightedEvidence]) -> str:
        prompt = self.render(
            "answerer",
            now_iso=to_iso(question.timestamp),
            question=question.as_query(),
            items=evidence_view(items),
        )
        return self.complete(prompt)


class BenchmarkRunner:
    """Runs the pipeline once per question with the question timestamp as now"""

    def __init__(self, services: Services, opts: ExecutionOptions, search: bool = True):
        self.services = services
        self.opts = opts
        self.search = search
        self.pipeline = SearchPipeline(services)
        self.answerer = AnswererAgent(services.llm, services.prompts,
                                      services.max_output(RoleTag.ANSWERER))

    async def run_question(self, question: BenchmarkQuestion) -> QuestionRecord:
        """Score one question; failures are recorded, never raised"""
        events = self.services.events
        events.record("question_start", question.id)
        record = QuestionRecord(id=question.id, category=question.category,
                                answer_key=question.answer_key)
        start_time = time.perf_counter()
        try:
            items: List[WeightedEvidence] = []
            if self.search:
                ctx = self.pipeline.prepare(question.as_query(), question.timestamp)
                graph = await self.pipeline.search(ctx, self.opts)
                items = self.pipeline.evidence(graph)
            text = await asyncio.to_thread(self.answerer.answer, question, items)
            record.predicted = extract_choice(text)
            record.correct = record.predicted == question.answer_key
        except NoChoiceFound as e:
            record.unparsed = True
            record.error = str(e)
        except Exception as e:
            logger.bind(agent="benchmark").error("question {} failed: {}", question.id, e)
            record.error = f"{type(e).__name__}: {e}"
        record.seconds = time.perf_counter() - start_time
        events.record("question_finish", question.id, predicted=record.predicted,
                      correct=record.correct)
        return record

    async def run(self, questions: Sequence[BenchmarkQuestion], jobs: int = 1) -> List[QuestionRecord]:
        if jobs <= 1 or self.services.scripted:
            if jobs > 1:
                logger.warning("scripted LLM backend: running questions sequentially")
            return [await self.run_question(q) for q in questions]

        semaphore = asyncio.Semaphore(jobs)

        async def bounded(question: BenchmarkQuestion) -> QuestionRecord:
            async with semaphore:
                return await self.run_question(question)

        return list(await asyncio.gather(*(bounded(q) for q in questions)))


async def evaluate(questions: Sequence[BenchmarkQuestion], services: Services,
                   opts: Optional[ExecutionOptions] = None, search: bool = True,
                   jobs: int = 1) -> BenchmarkResult:
    """
    Evaluate ``questions`` and score them.

    ``search=False`` is the no-retrieval baseline: the Answerer sees only
    the question.
    """
    opts = opts or ExecutionOptions()
    runner = BenchmarkRunner(services, opts, search)
    records = await runner.run(questions, jobs)
    result = summarize(records, opts, search)
    logger.info("{}: {}/{} correct, {} unparsed", describe(result), result.correct, result.n,
                result.unparsed)
    return result


async def evaluate_ablation(questions: Sequence[BenchmarkQuestion],
                            make_services: Callable[[], Services],
                            base: Optional[ExecutionOptions] = None,
                            jobs: int = 1) -> List[BenchmarkResult]:
    """
    The rewriter × temporal-weighting grid. Each configuration gets fresh
    services so scripted cursors start over.
    """
    base = base or ExecutionOptions()
    results = []
    for rewriter, temporal in ABLATION_GRID:
        opts = base.model_copy(update={"enable_rewriter": rewriter,
                                       "enable_temporal_weighting": temporal})
        results.append(await evaluate(questions, make_services(), opts, jobs=jobs))
    return results


def describe(result: BenchmarkResult) -> str:
    if not result.search_enabled:
        return "llm only (no search)"
    opts = result.options_used
    return (f"rewriter {'on' if opts.enable_rewriter else 'off'}, "
            f"temporal {'on' if opts.enable_temporal_weighting else 'off'}")


def _row(label: str, accuracy: float, std: float, mean_seconds: float, std_seconds: float) -> str:
    return f"{label:<{LABEL_WIDTH}} | {accuracy:.2f} ± {std:.2f} | {mean_seconds:.2f} ± {std_seconds:.2f}"


def format_result(result: BenchmarkResult) -> str:
    """Accuracy ± std and seconds ± std, overall then per category"""
    if result.n == 0:
        return f"{describe(result)}: no questions"

    lines = [
        f"{'setting':<{LABEL_WIDTH}} | accuracy % ± std | seconds ± std",
        _row(describe(result), result.accuracy_pct, result.std_pct,
             result.mean_seconds, result.std_seconds),
    ]
    for name, category in result.per_category.items():
        if category.n == 0:
            continue
        lines.append(_row(f"  {name} (n={category.n})", category.accuracy_pct, category.std_pct,
                          category.mean_seconds, category.std_seconds))
    lines.append(f"n={result.n} correct={result.correct} unparsed={result.unparsed}")
    return "\n".join(lines)


def format_results(results: Sequence[BenchmarkResult]) -> str:
    """One overall row per configuration, for ablation sweeps"""
    lines = [f"{'setting':<{LABEL_WIDTH}} | accuracy % ± std | seconds ± std"]
    for result in results:
        if result.n == 0:
            lines.append(f"{describe(result):<{LABEL_WIDTH}} | no questions")
            continue
        lines.append(_row(describe(result), result.accuracy_pct, result.std_pct,
                          result.mean_seconds, result.std_seconds))
    return "\n".join(lines)


def write_results(results: Sequence[BenchmarkResult], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    docs = [r.model_dump(mode="json") for r in results]
    payload = docs[0] if len(docs) == 1 else {"results": docs}
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path
