/**
 * Record-view state: the server record plus a local span edit buffer.
 *
 * The buffer may transiently hold overlapping spans (the validation gate
 * disables submit and explains why); all mutation helpers return fresh
 * objects so views re-render from state alone.
 */

import type { DisagreementRecord, Span } from './api.js';
import { scalarLength, sortSpans, validateSpans } from './spans.js';

export interface UiRecordView {
  record: DisagreementRecord;
  buffer: Span[];
  dirty: boolean;
}

/** Start editing from the latest server-side truth for this record. */
export function fromRecord(record: DisagreementRecord): UiRecordView {
  const base = record.status === 'corrected' && record.corrected_spans
    ? record.corrected_spans
    : record.coarse_spans;
  return { record, buffer: sortSpans(base), dirty: false };
}

export function withBuffer(view: UiRecordView, spans: Span[]): UiRecordView {
  return { ...view, buffer: sortSpans(spans), dirty: true };
}

export function addSpan(view: UiRecordView, span: Span): UiRecordView {
  return withBuffer(view, [...view.buffer, span]);
}

export function removeSpan(view: UiRecordView, index: number): UiRecordView {
  return withBuffer(view, view.buffer.filter((_, i) => i !== index));
}

export function acceptPredicted(view: UiRecordView): UiRecordView {
  return withBuffer(view, view.record.predicted_spans);
}

export function acceptCoarse(view: UiRecordView): UiRecordView {
  return withBuffer(view, view.record.coarse_spans);
}

/** Null when submit is allowed; otherwise the blocking problem. */
export function submitBlocker(view: UiRecordView): string | null {
  return validateSpans(view.buffer, scalarLength(view.record.text));
}

function sameSpans(a: Span[], b: Span[]): boolean {
  const sa = sortSpans(a);
  const sb = sortSpans(b);
  return sa.length === sb.length
    && sa.every((s, i) => s.start === sb[i]!.start && s.end === sb[i]!.end
      && s.label === sb[i]!.label);
}

/** An acknowledged submit must not be re-sent if nothing changed. */
export function alreadySubmitted(view: UiRecordView): boolean {
  return view.record.status === 'corrected'
    && view.record.corrected_spans !== null
    && sameSpans(view.buffer, view.record.corrected_spans);
}
