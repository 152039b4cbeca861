"""LM programs with open instruction/demo slots and the structured prompt formats.

A :class:`Program` is an ordered list of :class:`ModuleSpec` plus one
:class:`PromptAssignment` binding every slot.  :func:`render_prompt` turns a
program and an item into the exact text sent to a backend, and
:func:`parse_response` inverts the response contract.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, replace
from typing import Any

from .errors import InvalidArgumentError, ParseError

DEFAULT_DEMO_CAP = 3

REASONING = "REASONING"
OUTPUT = "OUTPUT"
INPUTS = "INPUTS"


class Method(str, enum.Enum):
    HELM_BASELINE = "HelmBaseline"
    ZERO_SHOT_PREDICT = "ZeroShotPredict"
    ZERO_SHOT_COT = "ZeroShotCoT"
    BFRS = "BFRS"
    MIPROV2 = "MIPROv2"

    @classmethod
    def parse(cls, value: str | Method) -> Method:
        if isinstance(value, Method):
            return value
        lowered = str(value).strip().lower().replace("-", "").replace("_", "")
        for m in cls:
            if m.value.lower() == lowered:
                return m
        aliases = {"baseline": cls.HELM_BASELINE, "helm": cls.HELM_BASELINE,
                   "predict": cls.ZERO_SHOT_PREDICT, "cot": cls.ZERO_SHOT_COT,
                   "mipro": cls.MIPROV2}
        if lowered in aliases:
            return aliases[lowered]
        raise InvalidArgumentError(f"unknown prompting method: {value!r}")

    @property
    def uses_cot(self) -> bool:
        return self in (Method.ZERO_SHOT_COT, Method.BFRS, Method.MIPROV2)

    @property
    def zero_shot(self) -> bool:
        return self in (Method.HELM_BASELINE, Method.ZERO_SHOT_PREDICT, Method.ZERO_SHOT_COT)


@dataclass(frozen=True)
class ModuleSpec:
    id: int
    seed_instruction: str
    input_field_names: tuple[str, ...] = (INPUTS,)
    output_field_names: tuple[str, ...] = (OUTPUT,)

    def __post_init__(self) -> None:
        if not self.output_field_names:
            raise InvalidArgumentError("a module needs at least one output field")

    def rendered_output_fields(self, method: Method) -> tuple[str, ...]:
        if method.uses_cot:
            return (REASONING,) + tuple(f for f in self.output_field_names if f != REASONING)
        return self.output_field_names


@dataclass(frozen=True)
class Demonstration:
    module_input: str
    module_output: str
    source_example_id: str
    reasoning: str | None = None

    def __post_init__(self) -> None:
        if not self.module_output.strip():
            raise InvalidArgumentError("demonstration output must be nonempty")

    def to_dict(self) -> dict[str, Any]:
        return {"module_input": self.module_input, "reasoning": self.reasoning,
                "module_output": self.module_output, "source_example_id": self.source_example_id}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Demonstration:
        return cls(module_input=d["module_input"], module_output=d["module_output"],
                   source_example_id=str(d["source_example_id"]), reasoning=d.get("reasoning"))


def default_objective(module: ModuleSpec) -> str:
    """The generic objective line used before any instruction is proposed."""
    ins = ", ".join(f'"{f}"' for f in module.input_field_names)
    outs = ", ".join(f'"{f}"' for f in module.output_field_names)
    return f"Given the fields {ins}, produce the fields {outs}"


@dataclass(frozen=True)
class PromptAssignment:
    """One binding of every instruction and demo slot.

    ``instructions[i]`` is the objective text of module ``i``; ``None`` means the
    module's default objective.  ``demos[i]`` is the ordered demo list ``S_i``.
    """

    method: Method
    instructions: tuple[str | None, ...]
    demos: tuple[tuple[Demonstration, ...], ...]
    demo_cap: int = DEFAULT_DEMO_CAP

    def __post_init__(self) -> None:
        if len(self.instructions) != len(self.demos):
            raise InvalidArgumentError("instructions and demos must cover the same modules")
        for s in self.demos:
            if len(s) > self.demo_cap:
                raise InvalidArgumentError(f"{len(s)} demos exceed the cap of {self.demo_cap}")
            if s and self.method.zero_shot:
                raise InvalidArgumentError(f"{self.method.value} programs carry no demos")

    @property
    def num_modules(self) -> int:
        return len(self.demos)

    @property
    def prompt_format(self) -> str:
        if self.method is Method.HELM_BASELINE:
            return "baseline"
        return "cot" if self.method.uses_cot else "predict"

    def canonical(self) -> str:
        """Stable text key identifying this assignment (used for hashing)."""
        # keyed on prompt format, not method label: equal prompts, equal key
        return json.dumps({
            "format": self.prompt_format,
            "modules": [{"instruction": ins, "demos": [d.source_example_id for d in s]}
                        for ins, s in zip(self.instructions, self.demos)],
        }, sort_keys=True, separators=(",", ":"))

    def to_dict(self) -> dict[str, Any]:
        return {"method": self.method.value, "demo_cap": self.demo_cap,
                "instructions": list(self.instructions),
                "demos": [[d.to_dict() for d in s] for s in self.demos]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PromptAssignment:
        return cls(method=Method.parse(d["method"]),
                   instructions=tuple(d["instructions"]),
                   demos=tuple(tuple(Demonstration.from_dict(x) for x in s) for s in d["demos"]),
                   demo_cap=int(d.get("demo_cap", DEFAULT_DEMO_CAP)))


@dataclass(frozen=True)
class Program:
    modules: tuple[ModuleSpec, ...]
    assignment: PromptAssignment

    def __post_init__(self) -> None:
        if len(self.modules) != self.assignment.num_modules:
            raise InvalidArgumentError("assignment must cover every module exactly once")
        if [m.id for m in self.modules] != list(range(len(self.modules))):
            raise InvalidArgumentError("module ids must be 0..m-1 in order")

    @property
    def method(self) -> Method:
        return self.assignment.method

    def with_assignment(self, assignment: PromptAssignment) -> Program:
        return replace(self, assignment=assignment)

    def as_method(self, method: Method) -> Program:
        """Same modules, fresh zero-demo assignment under ``method``."""
        return self.with_assignment(PromptAssignment(
            method=method,
            instructions=(None,) * len(self.modules),
            demos=((),) * len(self.modules),
            demo_cap=self.assignment.demo_cap,
        ))

    def to_dict(self) -> dict[str, Any]:
        return {"modules": [{"id": m.id, "seed_instruction": m.seed_instruction,
                             "input_field_names": list(m.input_field_names),
                             "output_field_names": list(m.output_field_names)}
                            for m in self.modules],
                "assignment": self.assignment.to_dict()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Program:
        modules = tuple(ModuleSpec(id=int(m["id"]), seed_instruction=m["seed_instruction"],
                                   input_field_names=tuple(m["input_field_names"]),
                                   output_field_names=tuple(m["output_field_names"]))
                        for m in d["modules"])
        return cls(modules=modules, assignment=PromptAssignment.from_dict(d["assignment"]))


def init_from_baseline(baseline_instruction: str, method: Method | str,
                       demo_cap: int = DEFAULT_DEMO_CAP) -> Program:
    """Single-module program seeded with the benchmark's baseline instruction."""
    if not baseline_instruction or not baseline_instruction.strip():
        raise InvalidArgumentError("baseline instruction must be nonempty")
    method = Method.parse(method)
    module = ModuleSpec(id=0, seed_instruction=baseline_instruction)
    return Program(modules=(module,), assignment=PromptAssignment(
        method=method, instructions=(None,), demos=((),), demo_cap=demo_cap))


def _quoted_list(names: tuple[str, ...]) -> str:
    quoted = [f'"{n}"' for n in names]
    if len(quoted) <= 1:
        return "".join(quoted)
    return ", ".join(quoted[:-1]) + " and " + quoted[-1]


def render_demo(demo: Demonstration, output_fields: tuple[str, ...]) -> str:
    parts = []
    for f in output_fields:
        if f == REASONING:
            parts.append(f"{REASONING}: {demo.reasoning or ''}")
        else:
            parts.append(f"{f}: {demo.module_output}")
    return f"{INPUTS}: {demo.module_input} → " + ", ".join(parts)


def render_module(program: Program, module_id: int, item_input: str) -> str:
    module = program.modules[module_id]
    a = program.assignment
    if a.method is Method.HELM_BASELINE:
        return f"{module.seed_instruction}\n{item_input}"

    out_fields = module.rendered_output_fields(a.method)
    objective = a.instructions[module_id] or default_objective(module)
    lines = [
        f"Your input fields are: {_quoted_list(module.input_field_names)}",
        f"Your output fields are: {_quoted_list(out_fields)}",
        f"Your objective is: {objective}",
        "",
    ]
    demos = a.demos[module_id]
    if demos:
        lines.append(f"IN-CONTEXT EXAMPLES ({len(demos)} Demos):")
        lines.extend(render_demo(d, out_fields) for d in demos)
        lines.append("")
    lines += [
        f"{INPUTS}:",
        module.seed_instruction,
        item_input,
        "",
    ]
    if len(out_fields) == 1:
        lines.append(f'Respond with the corresponding output fields, starting with "{out_fields[0]}".')
    else:
        rest = ", then ".join(f'"{f}"' for f in out_fields[1:])
        lines.append(f'Respond with the corresponding output fields, starting with "{out_fields[0]}", then {rest}.')
    return "\n".join(lines)


def render_prompt(program: Program, item_input: str) -> str:
    """Render the first module's prompt for one item.

    Every benchmark program here is single-module; multi-module callers use
    :func:`render_module` with each module's own input.
    """
    return render_module(program, 0, item_input)


@dataclass(frozen=True)
class ParsedOutput:
    output: str
    reasoning: str | None = None
    used_fallback: bool = False


_OUTPUT_RE = re.compile(rf"\b{OUTPUT}\s*:", re.IGNORECASE)
_REASONING_RE = re.compile(rf"\b{REASONING}\s*:", re.IGNORECASE)


def _last_nonempty_line(text: str) -> str:
    for line in reversed(text.splitlines()):
        if line.strip():
            return line.strip()
    return text.strip()


def parse_response(raw: str, method: Method | str) -> ParsedOutput:
    """Split an LM completion into reasoning and output.

    CoT-family methods read the text after the last ``OUTPUT:`` marker as the
    answer and the span after ``REASONING:`` up to it as the reasoning.  When
    no ``OUTPUT:`` marker exists the last nonempty line is taken as the answer.
    Predict and baseline completions are the whole trimmed text, except that a
    leading ``OUTPUT:`` marker is dropped for Zero-Shot Predict.
    """
    method = Method.parse(method)
    if raw is None or not raw.strip():
        raise ParseError("empty completion")
    text = raw.strip()

    if not method.uses_cot:
        if method is Method.ZERO_SHOT_PREDICT:
            m = re.match(rf"\s*{OUTPUT}\s*:", text, re.IGNORECASE)
            if m and text[m.end():].strip():
                return ParsedOutput(output=text[m.end():].strip())
        return ParsedOutput(output=text)

    out_matches = list(_OUTPUT_RE.finditer(text))
    if out_matches:
        last = out_matches[-1]
        output = text[last.end():].strip()
        head = text[:last.start()]
        reasoning = None
        r = list(_REASONING_RE.finditer(head))
        if r:
            reasoning = head[r[0].end():].strip().rstrip(",").strip()
        if output:
            return ParsedOutput(output=output, reasoning=reasoning)
    return ParsedOutput(output=_last_nonempty_line(text), used_fallback=True)


def format_fields(output: str, reasoning: str | None = None) -> str:
    """Emit a completion in the structured response format (inverse of parsing)."""
    if reasoning is None:
        return f"{OUTPUT}: {output}"
    return f"{REASONING}: {reasoning}\n{OUTPUT}: {output}"
