// Verdict rules shared by the session and the controls: severity is
// "none" exactly when the claim is supported or an honest no-evidence
// statement; unsupported claims carry minor/major/critical.

import type { ClaimAnnotation, Severity, SupportStatus } from "./types";

export function severityLocked(status: SupportStatus): boolean {
  return status !== "unsupported";
}

export function normalizeSeverity(status: SupportStatus, severity: Severity): Severity {
  if (severityLocked(status)) return "none";
  return severity === "none" ? "minor" : severity;
}

export function validateAnnotation(ann: ClaimAnnotation): string | null {
  if (ann.support_status === "supported" && ann.citation_keys.length === 0) {
    return "supported claims need at least one citation key";
  }
  if (ann.support_status === "unsupported" && ann.hallucination_severity === "none") {
    return "unsupported claims carry a hallucination severity";
  }
  if (ann.support_status !== "unsupported" && ann.hallucination_severity !== "none") {
    return "only unsupported claims carry a hallucination severity";
  }
  return null;
}

export function claimKey(reportId: string, claimId: number): string {
  return `${reportId}:${claimId}`;
}
