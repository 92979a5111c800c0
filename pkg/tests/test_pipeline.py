import json
import re

import pytest

from veridex.citations import extract_citations
from veridex.config import ThreadBudget
from veridex.errors import NoPassingReports, RunLocked, SchemaViolation, StageFailure
from veridex.gateway import ModelConfig
from veridex.index import EmbedderEndpoint
from veridex.pipeline import (
    SearchThread,
    SearchTool,
    execute_thread,
    judge_report,
    plan_search,
    run_pipeline,
    synopsize,
    synthesize,
)

from conftest import (
    NEEDLE_TEXT,
    build_run_dir,
    make_corpus,
    make_gateway,
    make_run_config,
)
from mock_endpoints import PipelineResponder


def make_tool(ns, **over):
    return SearchTool(index=ns.index, client=ns.client, chunk_store=ns.store, **over)


def run_fixture(tmp_path, mock_server, subdir="run", responder=None, **cfg_over):
    corpus = make_corpus(tmp_path / "corpus")
    ns = build_run_dir(tmp_path, corpus, mock_server, subdir=subdir)
    mock_server.responder = responder or PipelineResponder()
    cfg = make_run_config(ns.run_dir, mock_server, **cfg_over)
    return ns, cfg


# -- stage 1 ---------------------------------------------------------------

def test_synopsize_lists_topics(mock_server, tmp_path):
    corpus = make_corpus(tmp_path / "c", n_docs=2, with_needle=False)
    ns = build_run_dir(tmp_path, corpus, mock_server)
    mock_server.responder = PipelineResponder()
    gw = make_gateway(mock_server, tmp_path / "log.jsonl")
    syn = synopsize(ns.manifest, gw)
    assert syn.topics
    assert syn.source_manifest["doc_count"] == 2
    assert syn.truncated_docs == 0


def test_synopsize_truncates_to_fit_window(mock_server, tmp_path):
    corpus = make_corpus(tmp_path / "c")
    ns = build_run_dir(tmp_path, corpus, mock_server)
    mock_server.responder = PipelineResponder()
    gw = make_gateway(mock_server, tmp_path / "log.jsonl",
                      context_window_tokens=800, max_output_tokens=200)
    syn = synopsize(ns.manifest, gw)
    assert syn.truncated_docs >= 1
    assert syn.snippet_chars < 240


def test_synopsize_requires_topics_section(mock_server, tmp_path):
    corpus = make_corpus(tmp_path / "c", n_docs=2)
    ns = build_run_dir(tmp_path, corpus, mock_server)
    mock_server.responder = lambda p: "## Gaps\n- none\n"
    gw = make_gateway(mock_server, tmp_path / "log.jsonl")
    with pytest.raises(ValueError):
        synopsize(ns.manifest, gw)


# -- stage 2 ---------------------------------------------------------------

def test_plan_search_six_threads(mock_server, tmp_path):
    ns, _cfg = run_fixture(tmp_path, mock_server)
    gw = make_gateway(mock_server, tmp_path / "log.jsonl")
    syn = synopsize(ns.manifest, gw)
    plan = plan_search(syn, gw)
    assert len(plan.threads) == 6
    assert [t.thread_id for t in plan.threads] == [1, 2, 3, 4, 5, 6]
    assert len(plan.synopsis_digest) == 64


def test_plan_search_eight_threads_rejected(mock_server, tmp_path):
    ns, _cfg = run_fixture(tmp_path, mock_server, responder=PipelineResponder(n_threads=8))
    gw = make_gateway(mock_server, tmp_path / "log.jsonl")
    syn = synopsize(ns.manifest, gw)
    with pytest.raises(SchemaViolation):
        plan_search(syn, gw)


# -- stage 3 ---------------------------------------------------------------

def thread_def(queries, tid=1):
    return SearchThread(
        thread_id=tid,
        objective=f"Investigate pattern {tid} (THREAD-{tid}-MARKER)",
        sub_objectives=["Establish fact"],
        candidate_queries=queries,
    )


def test_execute_thread_cites_planted_chunk(mock_server, tmp_path):
    ns, _ = run_fixture(tmp_path, mock_server)
    gw = make_gateway(mock_server, tmp_path / "log.jsonl")
    needle_key = next(c.key for c in ns.chunks if c.text == NEEDLE_TEXT)
    report = execute_thread(thread_def([NEEDLE_TEXT]), make_tool(ns), gw)
    assert needle_key in report.cited_keys()
    assert report.findings
    assert set(report.cited_keys()) <= report.retrieved_keys()


def test_execute_thread_zero_hits_dead_end(mock_server, tmp_path):
    ns, _ = run_fixture(tmp_path, mock_server)
    gw = make_gateway(mock_server, tmp_path / "log.jsonl")
    tool = make_tool(ns, min_score=2.0)  # cosine <= 1: filters everything
    report = execute_thread(thread_def(["unrelated probe", "another probe"]), tool, gw)
    assert report.findings == []
    assert len(report.search_log) == 2
    assert all(e.hit_keys == [] for e in report.search_log)
    assert "no relevant documents" in report.narrative


def test_execute_thread_budget_exhaustion(mock_server, tmp_path):
    ns, _ = run_fixture(tmp_path, mock_server)
    gw = make_gateway(mock_server, tmp_path / "log.jsonl")
    budget = ThreadBudget(max_search_calls=2, max_model_turns=6)
    report = execute_thread(
        thread_def(["q one", "q two", "q three", "q four"]), make_tool(ns), gw, budget
    )
    assert len(report.search_log) == 2
    assert report.skipped_queries == ["q three", "q four"]
    assert report.budget_exhausted


def test_execute_thread_firewall_strips_unretrieved_key(mock_server, tmp_path):
    ns, _ = run_fixture(
        tmp_path, mock_server, responder=PipelineResponder(thread_bad_key="ffffff:9")
    )
    gw = make_gateway(mock_server, tmp_path / "log.jsonl")
    report = execute_thread(thread_def([NEEDLE_TEXT]), make_tool(ns), gw)
    # regenerated once, then stripped
    actions = {(v["kind"], v["action"]) for v in report.violations}
    assert ("unretrieved_citation", "regenerated") in actions
    assert ("unretrieved_citation", "stripped") in actions
    assert ("claim_stripped", "stripped") in actions
    assert "ffffff:9" not in report.cited_keys()
    assert "ffffff:9" not in report.narrative
    assert all("ffffff:9" not in k for f in report.findings for k in f.keys)
    # the fabricated claim (only bad key) is gone; the mixed one survives
    assert not any("Fabricated claim" in f.claim for f in report.findings)
    assert any("Claim A" in f.claim for f in report.findings)
    assert set(report.cited_keys()) <= report.retrieved_keys()


def test_execute_thread_search_log_used_flags(mock_server, tmp_path):
    ns, _ = run_fixture(tmp_path, mock_server)
    gw = make_gateway(mock_server, tmp_path / "log.jsonl")
    report = execute_thread(thread_def([NEEDLE_TEXT, "filler probe"]), make_tool(ns), gw)
    cited = set(report.cited_keys())
    for entry in report.search_log:
        assert entry.used == bool(cited & set(entry.hit_keys))


# -- stage 4 ---------------------------------------------------------------

@pytest.mark.parametrize(
    "scores,expected",
    [((5, 5), True), ((3, 3), True), ((3, 2), False), ((2, 5), False)],
)
def test_judge_pass_rule(mock_server, tmp_path, scores, expected):
    ns, _ = run_fixture(tmp_path, mock_server)
    gw = make_gateway(mock_server, tmp_path / "log.jsonl")
    thread = thread_def([NEEDLE_TEXT])
    report = execute_thread(thread, make_tool(ns), gw)
    mock_server.responder = lambda p: json.dumps(
        {"relevance_score": scores[0], "coverage_score": scores[1], "rationale": "r"}
    )
    verdict = judge_report(report, thread, gw)
    assert verdict.passed is expected
    assert verdict.to_dict()["pass"] is expected


# -- stage 5 ---------------------------------------------------------------

def passing_reports_fixture(mock_server, tmp_path, n=2):
    ns, _ = run_fixture(tmp_path, mock_server)
    gw = make_gateway(mock_server, tmp_path / "log.jsonl")
    reports = []
    for tid in range(1, n + 1):
        reports.append(execute_thread(thread_def([NEEDLE_TEXT], tid=tid), make_tool(ns), gw))
    return ns, gw, reports


def test_synthesize_collapses_exact_duplicates(mock_server, tmp_path):
    ns, gw, reports = passing_reports_fixture(mock_server, tmp_path)
    # plant an identical finding in both reports
    reports[1].findings[0] = reports[0].findings[0]
    synth_prompts = []
    original = PipelineResponder()

    def responder(prompt):
        if "synthesizing an executive brief" in prompt:
            synth_prompts.append(prompt)
        return original(prompt)

    mock_server.responder = responder
    brief = synthesize(reports, gw)
    claim = reports[0].findings[0].claim
    assert synth_prompts[0].count(claim) == 1
    assert brief.included_threads == [1, 2]


def test_synthesize_firewall_strips_novel_key(mock_server, tmp_path):
    ns, gw, reports = passing_reports_fixture(mock_server, tmp_path)
    mock_server.responder = PipelineResponder(brief_bad_key="eeeeee:7")
    brief = synthesize(reports, gw)
    allowed = set()
    for r in reports:
        allowed.update(r.cited_keys())
    assert "eeeeee:7" not in brief.citation_keys_used
    for _h, text in brief.summary_sections:
        assert {ref.key for ref in extract_citations(text)} <= allowed
    actions = {(v["kind"], v["action"]) for v in brief.violations}
    assert ("novel_citation", "regenerated") in actions
    assert ("novel_citation", "stripped") in actions


def test_synthesize_no_passing_reports(mock_server, tmp_path):
    gw = make_gateway(mock_server, tmp_path / "log.jsonl")
    with pytest.raises(NoPassingReports):
        synthesize([], gw)


# -- run_pipeline ------------------------------------------------------------

def read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_full_run_artifact_completeness(mock_server, tmp_path):
    ns, cfg = run_fixture(tmp_path, mock_server)
    result = run_pipeline(cfg)
    assert result.status == "completed"
    rd = ns.run_dir
    for name in ("synopsis.md", "synopsis.json", "plan.md", "plan.json",
                 "brief.md", "brief.json", "exchanges.jsonl", "run.json"):
        assert (rd / name).exists(), name
    thread_mds = sorted((rd / "threads").glob("thread_*.md"))
    assert len(thread_mds) == 6
    assert len(sorted((rd / "verdicts").glob("verdict_*.json"))) == 6
    plan = read_json(rd / "plan.json")
    assert 5 <= len(plan["threads"]) <= 7
    run_record = read_json(rd / "run.json")
    assert run_record["status"] == "completed"
    assert run_record["config"]["model_name"] == "mock-model"
    assert set(run_record["stage_timings_ms"]) == {
        "synopsis", "plan", "threads", "judge", "synthesis"
    }


def test_full_run_firewall_invariants_from_artifacts(mock_server, tmp_path):
    ns, cfg = run_fixture(tmp_path, mock_server)
    run_pipeline(cfg)
    rd = ns.run_dir
    all_thread_keys = set()
    for p in (rd / "threads").glob("thread_*.json"):
        payload = read_json(p)
        retrieved = {k for e in payload["search_log"] for k in e["hit_keys"]}
        md = (rd / "threads" / (p.stem + ".md")).read_text(encoding="utf-8")
        cited_md = {ref.key for ref in extract_citations(md)}
        assert cited_md <= retrieved
        assert set(payload["cited_keys"]) <= retrieved
        all_thread_keys |= set(payload["cited_keys"])
    brief = read_json(rd / "brief.json")
    assert set(brief["citation_keys_used"]) <= all_thread_keys
    brief_md = (rd / "brief.md").read_text(encoding="utf-8")
    assert {r.key for r in extract_citations(brief_md)} <= all_thread_keys


def test_full_run_thread_isolation(mock_server, tmp_path):
    ns, cfg = run_fixture(tmp_path, mock_server)
    run_pipeline(cfg)
    exchanges = [
        json.loads(line)
        for line in (ns.run_dir / "exchanges.jsonl").read_text().splitlines()
    ]
    for e in exchanges:
        if e["stage"] != "thread":
            continue
        m = re.search(r"THREAD-(\d+)-MARKER", e["prompt"])
        assert m, "thread exchange without marker"
        tid = m.group(1)
        for other in range(1, 7):
            if str(other) != tid:
                assert f"THREAD-{other}-MARKER-REPORT" not in e["prompt"]
                assert f"THREAD-{other}-MARKER-REPORT" not in e["response"]


def test_judge_gating_excludes_failing_thread(mock_server, tmp_path):
    ns, cfg = run_fixture(
        tmp_path, mock_server,
        responder=PipelineResponder(judge_scores={3: (3, 2)}),
    )
    result = run_pipeline(cfg)
    assert result.verdicts[3].passed is False
    assert all(result.verdicts[t].passed for t in (1, 2, 4, 5, 6))
    brief = read_json(ns.run_dir / "brief.json")
    assert brief["included_threads"] == [1, 2, 4, 5, 6]
    assert [e["thread_id"] for e in brief["excluded_threads"]] == [3]
    # synthesis input excludes exactly the failing thread's findings
    synth = [
        json.loads(line)
        for line in (ns.run_dir / "exchanges.jsonl").read_text().splitlines()
        if json.loads(line)["stage"] == "synthesis"
    ]
    assert synth
    assert "Claim A of thread 3" not in synth[0]["prompt"]
    assert "Claim A of thread 2" in synth[0]["prompt"]


def test_all_threads_fail_judge_yields_empty_brief(mock_server, tmp_path):
    scores = {t: (1, 1) for t in range(1, 7)}
    ns, cfg = run_fixture(tmp_path, mock_server, responder=PipelineResponder(judge_scores=scores))
    result = run_pipeline(cfg)
    assert result.status == "completed"
    brief = read_json(ns.run_dir / "brief.json")
    assert brief["status"] == "empty_no_passing_reports"
    assert brief["included_threads"] == []
    assert len(brief["excluded_threads"]) == 6
    md = (ns.run_dir / "brief.md").read_text()
    assert "No thread report passed the judge gate" in md


def test_endpoint_down_fails_at_synopsis(mock_server, tmp_path):
    ns, cfg = run_fixture(tmp_path, mock_server)
    cfg = make_run_config(ns.run_dir, mock_server)
    cfg.model = ModelConfig(
        model_name="mock-model", endpoint_url="http://127.0.0.1:1/v1/chat/completions",
        backoff_s=0.01, timeout_s=0.2,
    )
    with pytest.raises(StageFailure) as exc_info:
        run_pipeline(cfg)
    assert exc_info.value.stage == "synopsis"
    run_record = read_json(ns.run_dir / "run.json")
    assert run_record["status"] == "failed"
    assert run_record["failed_stage"] == "synopsis"
    assert not (ns.run_dir / "synopsis.md").exists()


def test_stages_through_plan_stops_after_stage2(mock_server, tmp_path):
    ns, cfg = run_fixture(tmp_path, mock_server, stages_through="plan")
    result = run_pipeline(cfg)
    assert result.status == "completed"
    assert (ns.run_dir / "plan.json").exists()
    assert not (ns.run_dir / "threads").exists()
    assert not (ns.run_dir / "brief.json").exists()


def test_run_lock_refuses_second_instance(mock_server, tmp_path):
    ns, cfg = run_fixture(tmp_path, mock_server)
    (ns.run_dir / ".veridex.lock").write_text("12345")
    with pytest.raises(RunLocked):
        run_pipeline(cfg)


def test_stale_embedder_preflight(mock_server, tmp_path):
    ns, cfg = run_fixture(tmp_path, mock_server)
    cfg.embedder = EmbedderEndpoint(url=mock_server.embed_url, model="other-embedder")
    with pytest.raises(StageFailure) as exc_info:
        run_pipeline(cfg)
    assert exc_info.value.stage == "preflight"


def test_missing_index_preflight(mock_server, tmp_path):
    ns, cfg = run_fixture(tmp_path, mock_server)
    (ns.run_dir / "index.jsonl").unlink()
    with pytest.raises(StageFailure) as exc_info:
        run_pipeline(cfg)
    assert exc_info.value.stage == "preflight"


def test_adversarial_run_emits_clean_artifacts_and_violation_log(mock_server, tmp_path):
    ns, cfg = run_fixture(
        tmp_path, mock_server,
        responder=PipelineResponder(thread_bad_key="ffffff:9", brief_bad_key="eeeeee:7"),
    )
    run_pipeline(cfg)
    rd = ns.run_dir
    violations = [json.loads(line) for line in (rd / "violations.jsonl").read_text().splitlines()]
    assert violations
    kinds = {v["kind"] for v in violations}
    assert "unretrieved_citation" in kinds
    assert "novel_citation" in kinds
    for p in list((rd / "threads").glob("*.md")) + [rd / "brief.md"]:
        text = p.read_text(encoding="utf-8")
        assert "ffffff:9" not in text
        assert "eeeeee:7" not in text
