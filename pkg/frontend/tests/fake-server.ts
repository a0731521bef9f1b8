/** Scripted in-memory server implementing the session API contract the UI
 * consumes: display lists of 6, context snapshots, click validation. */

import { ContextSnapshot, FetchLike, RoundRecord } from '../src/api.js';

const VOCAB = {
  attributes: ['gender', 'category', 'color'],
  values: {
    gender: ['men', 'women'],
    category: ['sneakers', 'boots'],
    color: ['red', 'blue', 'sky blue'],
  },
  applicability: { sneakers: ['color'], boots: ['color'] },
};

const TOKEN_ATTR: Record<string, string> = {};
for (const [attr, toks] of Object.entries(VOCAB.values)) {
  for (const t of toks) TOKEN_ATTR[t] = attr;
}

interface Session {
  id: string;
  mode: string;
  rounds: RoundRecord[];
  context: ContextSnapshot;
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

export class FakeServer {
  sessions = new Map<string, Session>();
  private counter = 0;
  private displayCounter = 0;
  requests: string[] = [];
  offline = false;

  private display(): { displayed: string[]; images: string[] } {
    const displayed = Array.from({ length: 6 },
      (_, i) => `P${(this.displayCounter * 6 + i + 1).toString().padStart(6, '0')}`);
    this.displayCounter += 1;
    return { displayed, images: displayed.map((p) => `/api/product/${p}/image.svg`) };
  }

  fetch: FetchLike = async (url, init) => {
    this.requests.push(`${init?.method ?? 'GET'} ${url}`);
    if (this.offline) throw new TypeError('fetch failed');
    const body = init?.body ? JSON.parse(String(init.body)) : null;

    if (url === '/api/vocab') return json(200, VOCAB);

    if (url === '/api/session' && init?.method === 'POST') {
      if (!['rules', 'agent', 'random'].includes(body.mode)) {
        return json(400, { detail: `unknown mode '${body.mode}'` });
      }
      const id = `s${(this.counter++).toString().padStart(6, '0')}`;
      this.sessions.set(id, {
        id, mode: body.mode, rounds: [],
        context: { gender: null, category: null, constraints: {} },
      });
      return json(200, { session_id: id, mode: body.mode });
    }

    const m = url.match(/^\/api\/session\/([^/]+)\/(query|click|history)$/);
    if (!m) return json(404, { detail: `no route ${url}` });
    const session = this.sessions.get(m[1]);
    if (!session) return json(404, { detail: `unknown session '${m[1]}'` });

    if (m[2] === 'history') {
      return json(200, { session_id: session.id, rounds: session.rounds });
    }

    if (m[2] === 'query') {
      const tokens: string[] = body.tokens;
      const unknown = tokens.filter((t) => !(t in TOKEN_ATTR));
      if (unknown.length) {
        return json(400, { detail: `unknown tokens: ${unknown.join(', ')}` });
      }
      for (const t of tokens) {
        const attr = TOKEN_ATTR[t];
        if (attr === 'gender') session.context.gender = t;
        else if (attr === 'category') session.context.category = t;
        else session.context.constraints[attr] = t;
      }
      const { displayed, images } = this.display();
      const round: RoundRecord = {
        round: session.rounds.length,
        query: { kind: 'text', round: session.rounds.length, tokens },
        displayed, images,
        context: structuredClone(session.context),
        n1: null,
      };
      session.rounds.push(round);
      return json(200, round);
    }

    // click
    const last = session.rounds[session.rounds.length - 1];
    if (!last || !last.displayed.includes(body.product_id)) {
      return json(409, { detail: `product '${body.product_id}' is not in the current display` });
    }
    const { displayed, images } = this.display();
    const round: RoundRecord = {
      round: session.rounds.length,
      query: { kind: 'image_click', round: session.rounds.length, clicked_product_id: body.product_id },
      displayed, images,
      context: structuredClone(session.context),
      n1: 3,
    };
    session.rounds.push(round);
    return json(200, round);
  };
}
