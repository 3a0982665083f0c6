import type { ImageSummary, LandmarkRecord, SaveResult } from './types.js';

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string = '',
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  imageUrl(id: string): string {
    return `${this.baseUrl}/images/${id}`;
  }

  async listImages(): Promise<ImageSummary[]> {
    const resp = await this.fetchFn(`${this.baseUrl}/images`);
    if (!resp.ok) throw new Error(`list failed: ${resp.status}`);
    const body = await resp.json();
    return body.images as ImageSummary[];
  }

  async getLandmarks(id: string): Promise<LandmarkRecord> {
    const resp = await this.fetchFn(`${this.baseUrl}/images/${id}/landmarks`);
    if (!resp.ok) throw new Error(`load failed: ${resp.status}`);
    return (await resp.json()) as LandmarkRecord;
  }

  async predict(id: string): Promise<LandmarkRecord> {
    const resp = await this.fetchFn(`${this.baseUrl}/images/${id}/predict`, {
      method: 'POST',
    });
    if (!resp.ok) {
      const detail = await this.errorDetail(resp);
      throw new Error(`predict failed: ${detail}`);
    }
    return (await resp.json()) as LandmarkRecord;
  }

  /** Save with optimistic concurrency; never throws on conflict so callers
   * can keep unsaved edits. */
  async putLandmarks(
    id: string,
    points: [number, number][],
    revision: number,
  ): Promise<SaveResult> {
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}/images/${id}/landmarks`, {
        method: 'PUT',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify({ points, revision }),
      });
    } catch (err) {
      return { ok: false, kind: 'network', detail: String(err) };
    }
    if (resp.status === 409) {
      return { ok: false, kind: 'conflict', detail: await this.errorDetail(resp) };
    }
    if (resp.status === 400 || resp.status === 422) {
      return { ok: false, kind: 'validation', detail: await this.errorDetail(resp) };
    }
    if (!resp.ok) {
      return { ok: false, kind: 'network', detail: `unexpected status ${resp.status}` };
    }
    return { ok: true, record: (await resp.json()) as LandmarkRecord };
  }

  private async errorDetail(resp: Response): Promise<string> {
    try {
      const body = await resp.json();
      return body.detail ?? body.error ?? `status ${resp.status}`;
    } catch {
      return `status ${resp.status}`;
    }
  }
}
