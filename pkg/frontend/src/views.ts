/**
 * HTML renderers for the queue and record views.
 *
 * The record text is rendered one scalar character per cell, so DOM
 * selection maps straight back to scalar indices via data-i attributes and
 * the server's span convention can never drift. Coarse and predicted spans
 * overlay in contrasting styles; server-provided diff positions are
 * emphasized (the UI never computes diffs itself).
 */

import type { DisagreementRecord, Progress } from './api.js';
import { scalarChars, spanIndexAt } from './spans.js';
import type { UiRecordView } from './state.js';
import { alreadySubmitted, submitBlocker } from './state.js';

export function escapeHtml(value: string): string {
  return value
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

export function renderProgress(progress: Progress): string {
  return `<span class="progress">pending ${progress.pending} · corrected ${progress.corrected}`
    + ` · skipped ${progress.skipped} · total ${progress.total}</span>`;
}

export function renderQueueView(records: DisagreementRecord[], progress: Progress): string {
  const rows = records.map((record) => {
    const preview = escapeHtml(scalarChars(record.text).slice(0, 60).join(''));
    return `<li class="queue-item" data-id="${escapeHtml(record.sentence_id)}">`
      + `<span class="badge" title="disagreeing positions">${record.diff_positions.length}</span>`
      + `<span class="sid">${escapeHtml(record.sentence_id)}</span>`
      + `<span class="preview">${preview}</span></li>`;
  });
  const body = rows.length
    ? `<ul class="queue">${rows.join('')}</ul>`
    : '<p class="empty">Queue is empty - nothing left to review.</p>';
  return `<section class="queue-view">
  <header><h1>Disagreement queue</h1>${renderProgress(progress)}</header>
  ${body}
  <p class="hint">Open a record by clicking it. Shortcuts inside a record:
  <kbd>p</kbd> accept predicted, <kbd>c</kbd> accept coarse, <kbd>x</kbd> clear,
  <kbd>Enter</kbd> submit, <kbd>s</kbd> skip, <kbd>q</kbd> back.</p>
</section>`;
}

function cellClasses(view: UiRecordView, index: number): string {
  const classes = ['ch'];
  if (spanIndexAt(view.record.coarse_spans, index) >= 0) classes.push('coarse');
  if (spanIndexAt(view.record.predicted_spans, index) >= 0) classes.push('predicted');
  if (spanIndexAt(view.buffer, index) >= 0) classes.push('buffer');
  if (view.record.diff_positions.includes(index)) classes.push('diff');
  return classes.join(' ');
}

export function renderRecordView(view: UiRecordView): string {
  const cells = scalarChars(view.record.text)
    .map((ch, i) => `<span class="${cellClasses(view, i)}" data-i="${i}">${escapeHtml(ch)}</span>`)
    .join('');
  const spans = view.buffer
    .map((span, i) =>
      `<li class="buffer-span" data-span="${i}">(${span.start}, ${span.end}) ${escapeHtml(span.label)}`
      + ' <button class="remove" title="remove span">x</button></li>')
    .join('');
  const blocker = submitBlocker(view);
  const submitted = alreadySubmitted(view);
  const submitDisabled = blocker !== null || submitted;
  const note = blocker
    ? `<p class="error" role="alert">${escapeHtml(blocker)}</p>`
    : submitted
      ? '<p class="note">Already submitted - change the spans to resubmit.</p>'
      : '';
  return `<section class="record-view" data-id="${escapeHtml(view.record.sentence_id)}">
  <header>
    <h1>${escapeHtml(view.record.sentence_id)}
      <span class="status ${view.record.status}">${view.record.status}</span>
      ${view.dirty ? '<span class="dirty" title="unsaved changes">*</span>' : ''}
    </h1>
    <p class="legend"><span class="swatch coarse">coarse</span>
      <span class="swatch predicted">predicted</span>
      <span class="swatch buffer">your spans</span>
      <span class="swatch diff">disagreement</span></p>
  </header>
  <div class="text" id="record-text">${cells}</div>
  <p class="hint">Select characters to add a span; click a listed span's x to remove it.</p>
  <label class="label-input">label
    <input id="span-label" value="${escapeHtml(defaultLabel(view))}" size="8">
  </label>
  <ul class="buffer-list">${spans.length ? spans : '<li class="empty">no spans</li>'}</ul>
  <div class="actions">
    <button id="accept-predicted">accept predicted (p)</button>
    <button id="accept-coarse">accept coarse (c)</button>
    <button id="clear-spans">clear (x)</button>
    <button id="submit" ${submitDisabled ? 'disabled' : ''}>submit (Enter)</button>
    <button id="skip">skip (s)</button>
    <button id="back">queue (q)</button>
  </div>
  ${note}
  <p class="inline-status" id="inline-status" role="status"></p>
</section>`;
}

export function defaultLabel(view: UiRecordView): string {
  const first = view.buffer[0] ?? view.record.coarse_spans[0] ?? view.record.predicted_spans[0];
  return first?.label ?? 'COM';
}

/**
 * Current DOM selection as a half-open scalar range over the record text,
 * or null when the selection does not touch the character cells.
 */
export function selectionToScalarRange(doc: Document): [number, number] | null {
  const selection = doc.defaultView?.getSelection?.() ?? null;
  if (!selection || selection.rangeCount === 0 || selection.isCollapsed) return null;
  const cellIndex = (node: Node | null): number | null => {
    const element: Element | null = node && node.nodeType === 1
      ? (node as Element)
      : node?.parentElement ?? null;
    const cell = element?.closest?.('.ch') ?? null;
    const raw = cell?.getAttribute('data-i');
    return raw === null || raw === undefined ? null : Number(raw);
  };
  const a = cellIndex(selection.anchorNode);
  const b = cellIndex(selection.focusNode);
  if (a === null || b === null) return null;
  const [lo, hi] = a <= b ? [a, b] : [b, a];
  return [lo, hi + 1];
}
