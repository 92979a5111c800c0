// Payload types for the veridex serve API. All server payloads carry
// schema_version; write records are one of three kinds.

export type SupportStatus = "supported" | "unsupported" | "no_evidence_flagged";
export type Severity = "none" | "minor" | "major" | "critical";
export type Outcome =
  | "satisfied_with_evidence"
  | "concluded_unsupported_with_documented_attempts"
  | "unaddressed";

export const SEVERITY_WEIGHTS: Record<Severity, number> = {
  none: 0,
  minor: 1,
  major: 2,
  critical: 3,
};

export interface ClaimAnnotation {
  kind: "claim";
  report_id: string; // thread id as string, or "brief"
  claim_id: number;
  claim_text: string;
  support_status: SupportStatus;
  citation_keys: string[];
  citation_valid: Record<string, boolean>;
  hallucination_severity: Severity;
  antecedents: string[]; // "report_id:claim_id" links for brief claims
  version?: number;
  schema_version?: number;
}

export interface SubObjectiveOutcome {
  kind: "sub_objective";
  thread_id: number;
  sub_objective_index: number;
  outcome: Outcome;
  version?: number;
  schema_version?: number;
}

export interface ClaimSegment {
  claim_id: number;
  claim_text: string;
  start: number;
  end: number;
}

export interface Segmentation {
  kind: "segmentation";
  report_id: string;
  claims: ClaimSegment[];
  version?: number;
  schema_version?: number;
}

export type AnnotationRecord = ClaimAnnotation | SubObjectiveOutcome | Segmentation;

export type ResolveStatus = "valid" | "unknown_doc" | "bad_index";

export interface ResolveResult {
  key: string;
  status: ResolveStatus;
  passage: string | null;
  doc_title: string | null;
  chunk_index: number;
  chunk_count: number;
  has_prev: boolean;
  has_next: boolean;
}

export interface ReportSummary {
  thread_id: number;
  status: string;
  objective: string;
  findings: number;
}

export interface Finding {
  claim: string;
  keys: string[];
}

export interface ThreadReportPayload {
  thread_id: number;
  status: string;
  narrative: string;
  findings: Finding[];
  open_questions: string[];
  next_step_queries: string[];
  cited_keys: string[];
  markdown: string;
  thread: {
    thread_id: number;
    objective: string;
    sub_objectives: string[];
    candidate_queries: string[];
  };
}

export interface BriefPayload {
  status: string;
  summary_sections: { heading: string; text: string }[];
  aggregated_next_steps: string[];
  included_threads: number[];
  citation_keys_used: string[];
  markdown: string;
}

export interface PlanThread {
  thread_id: number;
  objective: string;
  sub_objectives: string[];
  candidate_queries: string[];
}

export interface PlanPayload {
  synopsis_digest: string;
  threads: PlanThread[];
}

export interface SynthesisDelta {
  new_unsupported: number;
  new_invalid_citations: number;
  new_hallucinations: number;
}

export interface MetricsPayload {
  claim_support_rate: number | null;
  hallucination_severity_index: number | null;
  invalid_citation_rate: number | null;
  plan_adherence: number | null;
  synthesis_delta: SynthesisDelta | null;
  per_report: Record<string, Record<string, number | null>>;
  notes: string[];
}

export interface AnnotationsSnapshot {
  schema_version: number;
  claims: ClaimAnnotation[];
  sub_objectives: SubObjectiveOutcome[];
  segmentations: Segmentation[];
}
