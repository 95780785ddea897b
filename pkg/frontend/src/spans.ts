/**
 * Pure span and index helpers.
 *
 * JavaScript strings index UTF-16 code units, but every span the server
 * understands uses Unicode scalar-value indices; astral characters (one
 * scalar, two code units) would silently corrupt spans if indices leaked
 * straight from string offsets. Everything here converts at the boundary.
 */

import type { Span } from './api.js';

/** Characters of the text as scalar values (one entry per code point). */
export function scalarChars(text: string): string[] {
  return Array.from(text);
}

export function scalarLength(text: string): number {
  return scalarChars(text).length;
}

/** Convert a UTF-16 code-unit offset into a scalar-value index. */
export function utf16ToScalar(text: string, utf16Offset: number): number {
  let scalar = 0;
  let units = 0;
  for (const ch of text) {
    if (units >= utf16Offset) break;
    units += ch.length;
    scalar += 1;
  }
  return scalar;
}

/** Convert a scalar-value index into a UTF-16 code-unit offset. */
export function scalarToUtf16(text: string, scalarIndex: number): number {
  let units = 0;
  let scalar = 0;
  for (const ch of text) {
    if (scalar >= scalarIndex) break;
    units += ch.length;
    scalar += 1;
  }
  return units;
}

/** Slice by scalar-value indices (half-open interval). */
export function sliceByScalar(text: string, start: number, end: number): string {
  return scalarChars(text).slice(start, end).join('');
}

export function spansOverlap(a: Span, b: Span): boolean {
  return a.start < b.end && b.start < a.end;
}

export function sortSpans(spans: Span[]): Span[] {
  return [...spans].sort((a, b) => a.start - b.start || a.end - b.end);
}

/** Null when the spans are valid; otherwise a human-readable problem. */
export function validateSpans(spans: Span[], textScalarLength: number): string | null {
  const ordered = sortSpans(spans);
  for (const span of ordered) {
    if (span.start < 0 || span.end <= span.start || span.end > textScalarLength) {
      return `span (${span.start}, ${span.end}) is out of range`;
    }
  }
  for (let i = 1; i < ordered.length; i += 1) {
    const prev = ordered[i - 1]!;
    const cur = ordered[i]!;
    if (spansOverlap(prev, cur)) {
      return `spans (${prev.start}, ${prev.end}) and (${cur.start}, ${cur.end}) overlap`;
    }
  }
  return null;
}

/** Index of the span covering a scalar position, or -1. */
export function spanIndexAt(spans: Span[], scalarIndex: number): number {
  return spans.findIndex((s) => s.start <= scalarIndex && scalarIndex < s.end);
}
