// Default sentence-level segmentation with manual split/merge. Claim ids
// are renumbered densely after every edit; overlapping segments are
// rejected before anything is saved.

import type { ClaimSegment } from "./types";

const BOUNDARY = /[.!?]+(?=\s)|\n+/g;

function trimmedSpan(text: string, start: number, end: number): [number, number] | null {
  let s = start;
  let e = end;
  while (s < e && /\s/.test(text[s])) s++;
  while (e > s && /\s/.test(text[e - 1])) e--;
  return s < e ? [s, e] : null;
}

export function renumber(segments: ClaimSegment[]): ClaimSegment[] {
  return segments
    .slice()
    .sort((a, b) => a.start - b.start)
    .map((seg, i) => ({ ...seg, claim_id: i }));
}

export function defaultSegments(text: string): ClaimSegment[] {
  const spans: [number, number][] = [];
  let cursor = 0;
  for (const m of text.matchAll(BOUNDARY)) {
    const end = m.index! + m[0].length;
    const span = trimmedSpan(text, cursor, end);
    if (span) spans.push(span);
    cursor = end;
  }
  const tail = trimmedSpan(text, cursor, text.length);
  if (tail) spans.push(tail);
  return renumber(
    spans.map(([start, end], i) => ({
      claim_id: i,
      claim_text: text.slice(start, end),
      start,
      end,
    })),
  );
}

export function findOverlap(segments: ClaimSegment[]): string | null {
  const sorted = segments.slice().sort((a, b) => a.start - b.start);
  for (let i = 1; i < sorted.length; i++) {
    if (sorted[i].start < sorted[i - 1].end) {
      return `segments ${sorted[i - 1].claim_id} and ${sorted[i].claim_id} overlap`;
    }
  }
  return null;
}

export function splitSegment(
  text: string,
  segments: ClaimSegment[],
  claimId: number,
  offset: number,
): ClaimSegment[] {
  const target = segments.find((s) => s.claim_id === claimId);
  if (!target) throw new Error(`no segment ${claimId}`);
  if (offset <= target.start || offset >= target.end) {
    throw new Error("split offset must fall strictly inside the segment");
  }
  const rest = segments.filter((s) => s.claim_id !== claimId);
  const halves: ClaimSegment[] = [];
  for (const [s, e] of [
    [target.start, offset],
    [offset, target.end],
  ] as [number, number][]) {
    const span = trimmedSpan(text, s, e);
    if (span) {
      halves.push({ claim_id: -1, claim_text: text.slice(span[0], span[1]), start: span[0], end: span[1] });
    }
  }
  return renumber([...rest, ...halves]);
}

export function mergeWithNext(
  text: string,
  segments: ClaimSegment[],
  claimId: number,
): ClaimSegment[] {
  const sorted = segments.slice().sort((a, b) => a.start - b.start);
  const idx = sorted.findIndex((s) => s.claim_id === claimId);
  if (idx === -1) throw new Error(`no segment ${claimId}`);
  if (idx === sorted.length - 1) return renumber(sorted);
  const a = sorted[idx];
  const b = sorted[idx + 1];
  const merged: ClaimSegment = {
    claim_id: -1,
    claim_text: text.slice(a.start, b.end),
    start: a.start,
    end: b.end,
  };
  return renumber([...sorted.slice(0, idx), merged, ...sorted.slice(idx + 2)]);
}
