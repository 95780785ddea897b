/**
 * Application bootstrap: queue/record routing, selection-based span
 * editing, keyboard shortcuts, and non-destructive error handling (the
 * edit buffer survives any failed request).
 */

import { ApiError, ReviewApi } from './api.js';
import type { DisagreementRecord } from './api.js';
import * as state from './state.js';
import {
  renderQueueView,
  renderRecordView,
  selectionToScalarRange,
} from './views.js';

const api = new ReviewApi('');
const root = document.getElementById('app') as HTMLElement;

let currentView: state.UiRecordView | null = null;
let queueCache: DisagreementRecord[] = [];

function annotatorId(): string {
  let id = localStorage.getItem('annotator_id');
  if (!id) {
    id = `annotator-${Math.random().toString(36).slice(2, 8)}`;
    localStorage.setItem('annotator_id', id);
  }
  return id;
}

function setStatus(message: string, isError = false): void {
  const slot = document.getElementById('inline-status');
  if (slot) {
    slot.textContent = message;
    slot.classList.toggle('error', isError);
  }
}

async function showQueue(): Promise<void> {
  if (currentView?.dirty
    && !window.confirm('Discard unsaved span edits on this record?')) {
    return;
  }
  currentView = null;
  const [queue, progress] = await Promise.all([api.getQueue('pending', 200), api.getProgress()]);
  queueCache = queue.records;
  root.innerHTML = renderQueueView(queue.records, progress);
  root.querySelectorAll('.queue-item').forEach((item) => {
    item.addEventListener('click', () => {
      const id = item.getAttribute('data-id');
      if (id) void showRecord(id);
    });
  });
}

async function showRecord(sentenceId: string): Promise<void> {
  const record = await api.getRecord(sentenceId);
  currentView = state.fromRecord(record);
  paintRecord();
}

function paintRecord(): void {
  if (!currentView) return;
  root.innerHTML = renderRecordView(currentView);
  attachRecordHandlers();
}

function labelValue(): string {
  const input = document.getElementById('span-label') as HTMLInputElement | null;
  return input?.value.trim() || 'COM';
}

function attachRecordHandlers(): void {
  const text = document.getElementById('record-text');
  text?.addEventListener('mouseup', () => {
    const range = selectionToScalarRange(document);
    if (!range || !currentView) return;
    document.getSelection()?.removeAllRanges();
    currentView = state.addSpan(currentView, {
      start: range[0],
      end: range[1],
      label: labelValue(),
    });
    paintRecord();
  });
  root.querySelectorAll('.buffer-span .remove').forEach((button) => {
    button.addEventListener('click', (event) => {
      const item = (event.currentTarget as Element).closest('.buffer-span');
      const index = Number(item?.getAttribute('data-span'));
      if (currentView && Number.isFinite(index)) {
        currentView = state.removeSpan(currentView, index);
        paintRecord();
      }
    });
  });
  bind('accept-predicted', () => mutate((v) => state.acceptPredicted(v)));
  bind('accept-coarse', () => mutate((v) => state.acceptCoarse(v)));
  bind('clear-spans', () => mutate((v) => state.withBuffer(v, [])));
  bind('submit', () => void submitCurrent());
  bind('skip', () => void skipCurrent());
  bind('back', () => void showQueue());
}

function bind(id: string, handler: () => void): void {
  document.getElementById(id)?.addEventListener('click', handler);
}

function mutate(apply: (view: state.UiRecordView) => state.UiRecordView): void {
  if (!currentView) return;
  currentView = apply(currentView);
  paintRecord();
}

async function submitCurrent(): Promise<void> {
  if (!currentView) return;
  if (state.submitBlocker(currentView) !== null || state.alreadySubmitted(currentView)) return;
  const view = currentView;
  try {
    const updated = await api.submitCorrection(
      view.record.sentence_id, view.buffer, annotatorId());
    currentView = state.fromRecord(updated);
    await advance(`submitted ${updated.sentence_id}`);
  } catch (error) {
    // Non-destructive: the buffer stays as-is and the problem shows inline.
    if (error instanceof ApiError) {
      setStatus(`${error.code}: ${error.message}`, true);
    } else {
      setStatus(`network failure - nothing was saved (${String(error)})`, true);
    }
  }
}

async function skipCurrent(): Promise<void> {
  if (!currentView) return;
  try {
    const updated = await api.skip(currentView.record.sentence_id, annotatorId());
    currentView = state.fromRecord(updated);
    await advance(`skipped ${updated.sentence_id}`);
  } catch (error) {
    setStatus(`network failure - nothing was saved (${String(error)})`, true);
  }
}

/** Move to the next pending record, or back to the queue when done. */
async function advance(message: string): Promise<void> {
  currentView = null;
  const queue = await api.getQueue('pending', 1);
  const next = queue.records[0];
  if (next) {
    await showRecord(next.sentence_id);
    setStatus(message);
  } else {
    await showQueue();
  }
}

document.addEventListener('keydown', (event) => {
  if (!currentView) return;
  if (event.target instanceof HTMLInputElement) return;
  switch (event.key) {
    case 'p': mutate((v) => state.acceptPredicted(v)); break;
    case 'c': mutate((v) => state.acceptCoarse(v)); break;
    case 'x': mutate((v) => state.withBuffer(v, [])); break;
    case 'Enter': void submitCurrent(); break;
    case 's': void skipCurrent(); break;
    case 'q': void showQueue(); break;
    default: return;
  }
  event.preventDefault();
});

window.addEventListener('beforeunload', (event) => {
  if (currentView?.dirty) event.preventDefault();
});

void showQueue().catch((error) => {
  root.innerHTML = `<p class="error">Cannot reach the review server: ${String(error)}</p>`;
});

export { queueCache };
