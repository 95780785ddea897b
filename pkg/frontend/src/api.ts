/**
 * Typed client for the review server's JSON API.
 *
 * All character indices are Unicode scalar-value indices, matching the
 * server's convention (never UTF-16 code units).
 */

export interface Span {
  start: number;
  end: number;
  label: string;
}

export type RecordStatus = 'pending' | 'corrected' | 'skipped';

export interface DisagreementRecord {
  sentence_id: string;
  text: string;
  coarse_spans: Span[];
  predicted_spans: Span[];
  diff_positions: number[];
  status: RecordStatus;
  corrected_spans: Span[] | null;
  annotator_id?: string | null;
}

export interface QueueResponse {
  records: DisagreementRecord[];
  total: number;
}

export interface Progress {
  pending: number;
  corrected: number;
  skipped: number;
  total: number;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    detail: string,
  ) {
    super(detail);
  }
}

async function request<T>(url: string, options?: RequestInit): Promise<T> {
  const response = await fetch(url, {
    ...options,
    headers: { 'Content-Type': 'application/json', ...options?.headers },
  });
  if (!response.ok) {
    let code = 'HttpError';
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { error?: string; detail?: string };
      code = body.error ?? code;
      detail = body.detail ?? detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, code, detail);
  }
  return response.json() as Promise<T>;
}

export class ReviewApi {
  constructor(private readonly base: string = '') {}

  getQueue(status: RecordStatus = 'pending', limit = 50): Promise<QueueResponse> {
    return request(`${this.base}/api/queue?status=${status}&limit=${limit}`);
  }

  getRecord(sentenceId: string): Promise<DisagreementRecord> {
    return request(`${this.base}/api/record/${encodeURIComponent(sentenceId)}`);
  }

  submitCorrection(
    sentenceId: string,
    spans: Span[],
    annotatorId: string,
  ): Promise<DisagreementRecord> {
    return request(`${this.base}/api/record/${encodeURIComponent(sentenceId)}/correction`, {
      method: 'POST',
      body: JSON.stringify({ spans, annotator_id: annotatorId }),
    });
  }

  skip(sentenceId: string, annotatorId: string): Promise<DisagreementRecord> {
    return request(`${this.base}/api/record/${encodeURIComponent(sentenceId)}/skip`, {
      method: 'POST',
      body: JSON.stringify({ annotator_id: annotatorId }),
    });
  }

  getProgress(): Promise<Progress> {
    return request(`${this.base}/api/progress`);
  }
}
