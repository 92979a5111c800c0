// Client-side mirror of the metrics engine, used for the live preview
// while annotating. The authoritative numbers always come from
// GET /api/metrics; this module must agree with them cell-for-cell for
// the annotation-derived metrics (the invalid-citation rate is a machine
// metric computed server-side from artifacts).

import type {
  ClaimAnnotation,
  PlanPayload,
  SubObjectiveOutcome,
  SynthesisDelta,
} from "./types";
import { SEVERITY_WEIGHTS } from "./types";

export const BRIEF_REPORT_ID = "brief";

export function claimSupportRate(claims: ClaimAnnotation[]): number | null {
  const checkable = claims.filter(
    (c) => c.support_status === "supported" || c.support_status === "unsupported",
  );
  if (checkable.length === 0) return null;
  const supported = checkable.filter((c) => c.support_status === "supported").length;
  return supported / checkable.length;
}

export function groupByReport(claims: ClaimAnnotation[]): Map<string, ClaimAnnotation[]> {
  const byReport = new Map<string, ClaimAnnotation[]>();
  for (const c of claims) {
    if (c.report_id === BRIEF_REPORT_ID) continue;
    const bucket = byReport.get(c.report_id) ?? [];
    bucket.push(c);
    byReport.set(c.report_id, bucket);
  }
  return byReport;
}

export function runClaimSupport(claims: ClaimAnnotation[]): number | null {
  const rates: number[] = [];
  for (const anns of groupByReport(claims).values()) {
    const rate = claimSupportRate(anns);
    if (rate !== null) rates.push(rate);
  }
  if (rates.length === 0) return null;
  return rates.reduce((a, b) => a + b, 0) / rates.length;
}

export function hallucinationSeverityIndex(claims: ClaimAnnotation[]): number | null {
  const byReport = groupByReport(claims);
  if (byReport.size === 0) return null;
  let points = 0;
  for (const anns of byReport.values()) {
    for (const a of anns) points += SEVERITY_WEIGHTS[a.hallucination_severity];
  }
  return points / byReport.size;
}

export function planAdherence(
  plan: PlanPayload,
  outcomes: SubObjectiveOutcome[],
): number | null {
  const recorded = new Map<string, string>();
  for (const o of outcomes) {
    recorded.set(`${o.thread_id}:${o.sub_objective_index}`, o.outcome);
  }
  let total = 0;
  let good = 0;
  for (const t of plan.threads) {
    for (let j = 0; j < t.sub_objectives.length; j++) {
      const outcome = recorded.get(`${t.thread_id}:${j}`);
      if (outcome === undefined) return null; // coverage gap: not yet complete
      total += 1;
      if (
        outcome === "satisfied_with_evidence" ||
        outcome === "concluded_unsupported_with_documented_attempts"
      ) {
        good += 1;
      }
    }
  }
  return total ? good / total : null;
}

export function synthesisDelta(claims: ClaimAnnotation[]): SynthesisDelta {
  const brief = claims.filter((c) => c.report_id === BRIEF_REPORT_ID);
  const threads = claims.filter((c) => c.report_id !== BRIEF_REPORT_ID);
  const unlinked = brief.filter((c) => c.antecedents.length === 0);
  const threadInvalid = new Set<string>();
  for (const c of threads) {
    for (const [key, ok] of Object.entries(c.citation_valid)) {
      if (!ok) threadInvalid.add(key);
    }
  }
  let newInvalid = 0;
  for (const c of brief) {
    for (const [key, ok] of Object.entries(c.citation_valid)) {
      if (!ok && !threadInvalid.has(key)) newInvalid += 1;
    }
  }
  return {
    new_unsupported: unlinked.filter((c) => c.support_status === "unsupported").length,
    new_invalid_citations: newInvalid,
    new_hallucinations: unlinked.filter((c) => c.hallucination_severity !== "none").length,
  };
}

export interface PreviewMetrics {
  claim_support_rate: number | null;
  hallucination_severity_index: number | null;
  plan_adherence: number | null;
  synthesis_delta: SynthesisDelta;
}

export function preview(
  claims: ClaimAnnotation[],
  outcomes: SubObjectiveOutcome[],
  plan: PlanPayload | null,
): PreviewMetrics {
  return {
    claim_support_rate: runClaimSupport(claims),
    hallucination_severity_index: hallucinationSeverityIndex(claims),
    plan_adherence: plan ? planAdherence(plan, outcomes) : null,
    synthesis_delta: synthesisDelta(claims),
  };
}

// Table-cell formatting identical to the CLI's two-decimal table.
export function formatCell(value: number | null | undefined): string {
  return value === null || value === undefined ? "--" : value.toFixed(2);
}
