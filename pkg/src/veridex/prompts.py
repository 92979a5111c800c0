"""Versioned prompt assets for the five stages.

The section headers required of the model here are load-bearing: the
report and brief parsers key on them, and the firewall reprompts repeat
them. Change a header and you change the artifact grammar.
"""

PROMPTS_VERSION = 1

SYNOPSIS = """You are a research analyst preparing a corpus synopsis for an \
investigative team. Below are the documents in the corpus "{corpus_name}" \
({doc_count} documents), each with its id, title, and opening snippet.

{doc_listing}

Write a synopsis in Markdown with exactly these sections:

## Topics
- one bullet per major topic covered by the corpus

## Recurring Themes
- one bullet per theme that appears across multiple documents

## Gaps
- one bullet per apparent gap or open area the corpus does not cover

Base every bullet only on the listed documents."""

PLAN = """You are planning an investigative document search. Here is the \
corpus synopsis:

{synopsis}

Propose between 5 and 7 independent search threads. Threads must not \
reference each other. Respond with ONLY a JSON object of this exact shape:

{{
  "threads": [
    {{
      "thread_id": 1,
      "objective": "one-sentence investigation objective",
      "sub_objectives": ["specific question to answer", "..."],
      "candidate_queries": ["semantic search query", "..."]
    }}
  ]
}}

thread_id values must run 1, 2, 3, ... with no gaps. Every thread needs at \
least one sub-objective and at least one candidate query."""

THREAD = """You are executing one isolated search thread of an investigation.

Objective: {objective}

Sub-objectives:
{sub_objectives}

The semantic index returned the following passages. Each passage is headed \
by its citation key in brackets.

{passages}

Write a thread report in Markdown with exactly these sections:

## Narrative
A short narrative of what the retrieved passages establish. Cite evidence \
inline with bracketed keys, e.g. [7db3cb:0].

## Findings
- one bullet per finding; each bullet must end with one or more bracketed \
citation keys

## Open Questions
- one bullet per unresolved question; if no relevant documents were \
retrieved for a sub-objective, say so explicitly here

## Next-Step Queries
- one bullet per follow-up query worth running

Cite ONLY the citation keys shown above. Never invent a key. If the \
passages do not support a claim, do not make the claim."""

THREAD_REPAIR = """{original}

Your previous report cited keys that were never retrieved: {bad_keys}. \
Rewrite the report citing ONLY these keys: {allowed_keys}."""

JUDGE = """You are a strict evaluation judge. Score the following thread \
report for the investigation thread below.

Thread objective: {objective}
Sub-objectives:
{sub_objectives}

Report:
{report}

Score relevance (does the report address the objective?) and coverage (does \
it address every sub-objective, including explicit dead-ends?) on 1-5 \
scales. Respond with ONLY a JSON object:

{{"relevance_score": <1-5>, "coverage_score": <1-5>, "rationale": "one or two sentences"}}"""

SYNTHESIS = """You are synthesizing an executive brief from the surviving \
thread reports of an investigation. Their findings (deduplicated) and open \
questions are listed below; each finding ends with its citation keys.

Findings:
{findings}

Open questions:
{open_questions}

Next-step queries proposed by the threads:
{next_steps}

Write the brief in Markdown:

# Executive Brief

## <topic heading>
One or more paragraphs merging related findings, with inline bracketed \
citation keys carried over from the findings.

(repeat ## sections per topic)

## Next Steps
- one bullet per aggregated next step

De-duplicate overlapping findings. Preserve citation keys exactly as \
given. Use ONLY the citation keys listed above; never introduce a new key."""

SYNTHESIS_REPAIR = """{original}

Your previous brief cited keys absent from every thread report: {bad_keys}. \
Rewrite the brief citing ONLY these keys: {allowed_keys}."""
