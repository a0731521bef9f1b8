/** Typed client for the mmbrowse session API.
 *
 * The transport is injectable so the state machine can be tested against a
 * scripted server; the browser build passes window.fetch.
 */

export type ResponderMode = 'rules' | 'agent' | 'random';

export interface QueryInfo {
  kind: 'text' | 'image_click';
  round: number;
  tokens?: string[];
  clicked_product_id?: string;
}

export interface ContextSnapshot {
  gender: string | null;
  category: string | null;
  constraints: Record<string, string>;
}

export interface RoundRecord {
  round: number;
  query: QueryInfo;
  displayed: string[];
  images: string[];
  context: ContextSnapshot;
  n1: number | null;
}

export interface VocabInfo {
  attributes: string[];
  values: Record<string, string[]>;
  applicability: Record<string, string[]>;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
  }
}

async function request<T>(fetchFn: FetchLike, url: string, init?: RequestInit): Promise<T> {
  const resp = await fetchFn(url, init);
  if (!resp.ok) {
    let detail = `HTTP ${resp.status}`;
    try {
      const body = await resp.json();
      if (body && typeof body.detail === 'string') detail = body.detail;
    } catch {
      // non-JSON error body: keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

function post(body: unknown): RequestInit {
  return {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify(body),
  };
}

export class ApiClient {
  constructor(private readonly fetchFn: FetchLike, private readonly base = '') {}

  createSession(mode: ResponderMode): Promise<{ session_id: string; mode: ResponderMode }> {
    return request(this.fetchFn, `${this.base}/api/session`, post({ mode }));
  }

  submitQuery(sessionId: string, tokens: string[]): Promise<RoundRecord> {
    return request(
      this.fetchFn,
      `${this.base}/api/session/${encodeURIComponent(sessionId)}/query`,
      post({ tokens }),
    );
  }

  submitClick(sessionId: string, productId: string): Promise<RoundRecord> {
    return request(
      this.fetchFn,
      `${this.base}/api/session/${encodeURIComponent(sessionId)}/click`,
      post({ product_id: productId }),
    );
  }

  history(sessionId: string): Promise<{ session_id: string; rounds: RoundRecord[] }> {
    return request(this.fetchFn, `${this.base}/api/session/${encodeURIComponent(sessionId)}/history`);
  }

  vocab(): Promise<VocabInfo> {
    return request(this.fetchFn, `${this.base}/api/vocab`);
  }

  imageUrl(productId: string): string {
    return `${this.base}/api/product/${encodeURIComponent(productId)}/image.svg`;
  }
}
