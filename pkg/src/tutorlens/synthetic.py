"""Deterministic synthetic corpus generator.

Prompts are assembled from per-fine-type phrase banks built around the
default keyword rules, so the heuristic ground truth is unambiguous.
Risk behaviors (verbatim re-pastes, answer-seeking streaks, unverified
code) are injected into disjoint session sets and recorded exactly in
the manifest; control sessions are constructed to stay below every
detector threshold. Canary PII strings (emails, ids, roster names) are
planted in control-session prompts and listed for leak scanning.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .core import format_ts
from .errors import ConfigError

COURSE_ID = "course-101"
BASE_START = datetime(2024, 10, 7, 9, 0, tzinfo=timezone.utc)  # Monday, 2024-W41

TOPICS = (
    "recursion",
    "loops",
    "strings",
    "sorting",
    "dictionaries",
    "classes",
    "files",
    "functions",
)

# Each sentence embeds at least one keyword of its own fine type and no
# keyword of any other type; tests enforce this purity against the
# default taxonomy.
PHRASE_BANKS: dict[str, tuple[str, ...]] = {
    "task_clarification": (
        "For the {topic} exercise, what is the task asking us to produce? I want to be sure about {topic} before I begin.",
        "I do not fully understand the assignment on {topic}. Could you restate the {topic} part simply?",
        "Before starting, what are the requirements for the {topic} task? The {topic} section of the handout is unclear.",
        "Can you clarify the task about {topic}? I want to confirm the {topic} scope first.",
    ),
    "concept_explanation": (
        "Please explain the concept of {topic} simply. I keep mixing up {topic} basics.",
        "What does the term {topic} actually mean here? Our slides treat {topic} loosely.",
        "Can you explain how {topic} behaves in Python? A small {topic} example would be great.",
        "What is the difference between {topic} and the version we saw last week? Both involve {topic}.",
    ),
    "approach_request": (
        "How should I approach the {topic} problem? I have read the {topic} notes twice.",
        "How do I start with {topic}? A rough sketch of the {topic} part would be enough.",
        "Could you outline the steps for a {topic} solution? I will fill in the {topic} details.",
        "What approach should I take for {topic}? I am unsure where {topic} fits.",
    ),
    "full_solution_request": (
        "Please write the complete code for the {topic} assignment, including the {topic} edge cases.",
        "Just give me the answer to the {topic} question; I will study the {topic} later.",
        "Can you give me the full solution for {topic}? I am out of time for {topic} today.",
        "Please solve this for me: the {topic} exercise. Print the {topic} result directly.",
    ),
    "debugging_help": (
        "My {topic} function raises an IndexError, how do I fix it? The {topic} input is a list.",
        "I get a TypeError exception in my {topic} part on line three. The {topic} call looks right to me.",
        "The traceback points at my {topic} loop but I cannot read it. What went wrong in the {topic} part?",
        "My {topic} script stops with an error about NoneType. The {topic} data came from the previous step.",
    ),
    "code_behavior_question": (
        "Why does my code print each {topic} item twice? I expected one {topic} line.",
        "I see unexpected output from the {topic} function: the {topic} order comes back reversed.",
        "Why is the output of my {topic} version all zeros? The {topic} math seems right.",
        "My function prints the wrong {topic} value on the second call. The first {topic} call is fine.",
    ),
    "progress_check": (
        "Here is my idea for the {topic} part; is this correct so far? I want the {topic} basics right.",
        "Am I on the right track with {topic}? I have the {topic} skeleton done.",
        "Does this look right for the {topic} case? I treated {topic} as a special case.",
        "Can you check my {topic} logic before I continue? The {topic} part worries me.",
    ),
    "refactor_request": (
        "Could you help me refactor the {topic} section? The {topic} block repeats itself.",
        "I want to clean up my code for {topic}; the {topic} version sprawls.",
        "How can I make the {topic} function more readable? The {topic} names are cryptic.",
        "I would like to restructure my {topic} module: the {topic} parts are tangled.",
    ),
    "efficiency_request": (
        "Is there a more efficient way to handle {topic}? My {topic} version is slow.",
        "How can I optimize the {topic} step? The {topic} loop runs a million times.",
        "Is there a faster way to do {topic}? The current {topic} pass takes minutes.",
        "How can I use less memory in the {topic} stage? The {topic} list gets huge.",
    ),
    "alternative_solution": (
        "Is there another way to express the {topic} step? My {topic} version feels clumsy.",
        "Could you show an alternative approach to {topic}? My {topic} attempt works but feels odd.",
        "Is there a different way to solve the {topic} exercise? I already have one {topic} version.",
        "What other ways to structure the {topic} part exist? The {topic} lecture showed only one.",
    ),
    "style_feedback": (
        "Which naming convention fits my {topic} helpers? The {topic} names are inconsistent.",
        "Any feedback on the code style of my {topic} part? The {topic} file grew messy.",
        "Is this the idiomatic way to write {topic} in Python? My {topic} version looks clunky.",
        "Does my {topic} file follow pep 8? The {topic} section has long lines.",
    ),
}

ASSISTANT_REPLIES = (
    "Think about the smallest input first and describe what should happen for it before writing anything.",
    "One useful strategy is to trace your logic on paper with a tiny example and note each intermediate value.",
    "Consider splitting the work into a helper that handles one item and a driver that walks the collection.",
    "A good habit is to restate the problem in your own words and list the inputs you expect.",
    "Compare your current attempt with the signature the exercise expects and note any mismatch in types.",
)

# long enough to clear the 20-token floor; pasted verbatim it overlaps 1.0
PASTE_SOURCE_REPLY = (
    "Here is one way to structure it: define a helper that checks the base case "
    "first, then reduce the input step by step, and finally combine the partial "
    "results into the value you return."
)

CODE_REPLY = (
    "Here is a small example you can adapt:\n"
    "```python\n"
    "def solve(items):\n"
    "    total = 0\n"
    "    for item in items:\n"
    "        total += item\n"
    "    return total\n"
    "```\n"
    "Work through it line by line."
)

CANARY_EMAIL_WRAPPER = "By the way, you can reach me at {canary} if needed."
CANARY_ID_WRAPPER = "For the record, my student number is {canary}."
CANARY_NAME_WRAPPER = "My classmate {canary} suggested asking you."

_NAME_FIRST = ("Velda", "Orin", "Petra", "Quill", "Sable", "Tamsin", "Ulric", "Wren")
_NAME_LAST = ("Canaryson", "Canaryfield", "Canarwick", "Canarholm")


@dataclass(frozen=True)
class SyntheticScenario:
    student_count: int = 22
    session_count: int = 230
    prompts_per_session: tuple[int, int] = (2, 5)
    strategy_mixture: dict[str, float] = field(default_factory=dict)
    copy_paste_injections: int = 8
    answer_streak_injections: int = 8
    unverified_code_injections: int = 8
    canary_count: int = 100
    seed: int = 20241007
    course_id: str = COURSE_ID

    def validate(self) -> None:
        injected = (
            self.copy_paste_injections
            + self.answer_streak_injections
            + self.unverified_code_injections
        )
        if injected > self.session_count:
            raise ConfigError(
                f"{injected} injections do not fit in {self.session_count} sessions"
            )
        if self.student_count < 1 or self.session_count < 1:
            raise ConfigError("student_count and session_count must be positive")
        if self.canary_count > (self.session_count - injected):
            raise ConfigError(
                "not enough injection-free sessions to carry all canaries"
            )


def _canaries(scenario: SyntheticScenario) -> list[tuple[str, str, str]]:
    """(kind, canary string, wrapper) triples, deterministic from counts."""
    out: list[tuple[str, str, str]] = []
    for i in range(scenario.canary_count):
        kind = ("email", "id", "name")[i % 3]
        if kind == "email":
            canary = f"canary.user{i:03d}@example-uni.edu"
            wrapper = CANARY_EMAIL_WRAPPER
        elif kind == "id":
            canary = f"{1 + i % 9}QZ{58000 + i:05d}"
            wrapper = CANARY_ID_WRAPPER
        else:
            canary = (
                f"{_NAME_FIRST[i % len(_NAME_FIRST)]} "
                f"{_NAME_LAST[i % len(_NAME_LAST)]}{i:02d}"
            )
            wrapper = CANARY_NAME_WRAPPER
        out.append((kind, canary, wrapper))
    return out


def _default_mixture() -> dict[str, float]:
    mixture = {fine_id: 1.0 for fine_id in PHRASE_BANKS}
    mixture["full_solution_request"] = 0.5  # keep control sessions below ratio
    return mixture


def generate_corpus(scenario: SyntheticScenario, out_dir: str | Path) -> dict:
    """Write transcript.jsonl, ground_truth.jsonl and manifest.json.

    Pure function of the scenario (seed included): rerunning produces
    identical bytes. Returns the manifest record.
    """
    scenario.validate()
    rng = random.Random(scenario.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    students = [f"student-{i:02d}" for i in range(1, scenario.student_count + 1)]
    mixture = dict(scenario.strategy_mixture) or _default_mixture()
    fine_ids = sorted(mixture)
    weights = [mixture[fid] for fid in fine_ids]
    seeking_ids = {"full_solution_request"}

    session_ids = [f"sess-{k:04d}" for k in range(scenario.session_count)]
    pool = list(range(scenario.session_count))
    rng.shuffle(pool)
    cp = scenario.copy_paste_injections
    streak = scenario.answer_streak_injections
    uncode = scenario.unverified_code_injections
    copy_paste_set = set(pool[:cp])
    streak_set = set(pool[cp : cp + streak])
    uncode_set = set(pool[cp + streak : cp + streak + uncode])
    control = [k for k in pool[cp + streak + uncode :]]
    canaries = _canaries(scenario)
    canary_holders = dict(zip(sorted(control)[: len(canaries)], canaries))

    transcript_lines: list[str] = []
    truth_lines: list[str] = []

    def pick_fine(rng: random.Random) -> str:
        return rng.choices(fine_ids, weights=weights, k=1)[0]

    def control_prompt_plan(n: int) -> list[str]:
        plan = [pick_fine(rng) for _ in range(n)]
        if n >= 3:
            cap = (n - 1) // 2  # keep answer-seeking ratio strictly below 0.5
            non_seeking = [f for f in fine_ids if f not in seeking_ids]
            for idx, fid in enumerate(plan):
                if fid in seeking_ids and sum(
                    1 for f in plan[: idx + 1] if f in seeking_ids
                ) > cap:
                    plan[idx] = rng.choice(non_seeking)
        return plan

    def render(fine_id: str, topic: str) -> str:
        bank = PHRASE_BANKS[fine_id]
        return bank[rng.randrange(len(bank))].format(topic=topic)

    for k in range(scenario.session_count):
        session_id = session_ids[k]
        student = students[k % scenario.student_count]
        week = k % 10
        start = BASE_START + timedelta(
            days=7 * week, hours=(k // 10) % 8, minutes=7 * (k % 13)
        )
        topic = TOPICS[rng.randrange(len(TOPICS))]
        ts = start
        events: list[dict] = []
        truths: list[dict] = []
        student_seq = 0

        def emit(author: str, text: str):
            nonlocal ts
            events.append(
                {
                    "student_id_raw": student,
                    "author": author,
                    "timestamp": format_ts(ts),
                    "text_raw": text,
                    "course_id": scenario.course_id,
                    "explicit_session_id": session_id,
                }
            )
            ts = ts + timedelta(minutes=2)

        def emit_prompt(fine_id: str, text: str, bank: bool = True):
            nonlocal student_seq
            emit("student", text)
            truths.append(
                {
                    "session_id": session_id,
                    "student_seq": student_seq,
                    "fine_id": fine_id,
                    "bank": bank,
                }
            )
            student_seq += 1

        if k in copy_paste_set:
            emit_prompt(pick_fine(rng), render(pick_fine(rng), topic))
            # keep ground truth aligned with the rendered type
            truths[-1]["fine_id"] = _fine_of(truths[-1], events[-1]["text_raw"])
            emit("assistant", PASTE_SOURCE_REPLY)
            emit_prompt("uncategorized", PASTE_SOURCE_REPLY, bank=False)
            emit("assistant", ASSISTANT_REPLIES[rng.randrange(len(ASSISTANT_REPLIES))])
        elif k in streak_set:
            n = rng.randint(max(3, scenario.prompts_per_session[0]), 6)
            for _ in range(n):
                fid = "full_solution_request"
                emit_prompt(fid, render(fid, topic))
                emit(
                    "assistant",
                    ASSISTANT_REPLIES[rng.randrange(len(ASSISTANT_REPLIES))],
                )
        elif k in uncode_set:
            n = rng.randint(2, 3)
            plan = control_prompt_plan(n)
            for fid in plan:
                emit_prompt(fid, render(fid, topic))
                emit(
                    "assistant",
                    ASSISTANT_REPLIES[rng.randrange(len(ASSISTANT_REPLIES))],
                )
            emit("assistant", CODE_REPLY)  # final, never verified
        else:
            n = rng.randint(*scenario.prompts_per_session)
            plan = control_prompt_plan(n)
            canary = canary_holders.get(k)
            canary_at = rng.randrange(n) if canary else -1
            for idx, fid in enumerate(plan):
                text = render(fid, topic)
                if idx == canary_at and canary is not None:
                    text = text + " " + canary[2].format(canary=canary[1])
                emit_prompt(fid, text)
                emit(
                    "assistant",
                    ASSISTANT_REPLIES[rng.randrange(len(ASSISTANT_REPLIES))],
                )

        transcript_lines.extend(
            json.dumps(e, ensure_ascii=False, separators=(",", ":")) for e in events
        )
        truth_lines.extend(
            json.dumps(t, ensure_ascii=False, separators=(",", ":")) for t in truths
        )

    roster_names = sorted(
        {canary for kind, canary, _ in canaries if kind == "name"}
    )
    manifest = {
        "scenario": {
            "student_count": scenario.student_count,
            "session_count": scenario.session_count,
            "seed": scenario.seed,
            "course_id": scenario.course_id,
        },
        "students": students,
        "roster_names": roster_names,
        "canaries": [canary for _, canary, _ in canaries],
        "injections": {
            "copy_paste": sorted(session_ids[k] for k in copy_paste_set),
            "answer_overreliance": sorted(session_ids[k] for k in streak_set),
            "lack_of_verification": sorted(session_ids[k] for k in uncode_set),
        },
    }

    (out / "transcript.jsonl").write_text(
        "\n".join(transcript_lines) + "\n", encoding="utf-8"
    )
    (out / "ground_truth.jsonl").write_text(
        "\n".join(truth_lines) + "\n", encoding="utf-8"
    )
    (out / "manifest.json").write_text(
        json.dumps(manifest, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    return manifest


def _fine_of(truth: dict, text: str) -> str:
    from .classify import DEFAULT_TAXONOMY, classify_prompt

    return classify_prompt(text, DEFAULT_TAXONOMY).fine_id
