import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.js';
import { SessionController } from '../src/state.js';
import { FakeServer } from './fake-server.js';

function setup() {
  const server = new FakeServer();
  const controller = new SessionController(new ApiClient(server.fetch));
  return { server, controller };
}

describe('session lifecycle', () => {
  it('starts a session per mode and reports it', async () => {
    for (const mode of ['rules', 'agent', 'random'] as const) {
      const { controller } = setup();
      await controller.startSession(mode);
      expect(controller.sessionId).not.toBeNull();
      expect(controller.mode).toBe(mode);
      expect(controller.rounds).toEqual([]);
    }
  });

  it('mode switch starts a fresh session and archives the old rounds', async () => {
    const { controller } = setup();
    await controller.startSession('rules');
    const firstId = controller.sessionId;
    await controller.submitText(['women']);
    await controller.startSession('random');
    expect(controller.sessionId).not.toBe(firstId);
    expect(controller.rounds).toEqual([]);
    expect(controller.archived).toHaveLength(1);
    expect(controller.archived[0].sessionId).toBe(firstId);
    expect(controller.archived[0].rounds).toHaveLength(1);
  });

  it('offline server surfaces a banner without throwing', async () => {
    const { server, controller } = setup();
    server.offline = true;
    await controller.startSession('rules');
    expect(controller.errorBanner).toMatch(/unreachable/);
    expect(controller.sessionId).toBeNull();
  });

  it('two controllers hold independent sessions', async () => {
    const server = new FakeServer();
    const a = new SessionController(new ApiClient(server.fetch));
    const b = new SessionController(new ApiClient(server.fetch));
    await a.startSession('rules');
    await b.startSession('agent');
    expect(a.sessionId).not.toBe(b.sessionId);
    await a.submitText(['women']);
    expect(a.rounds).toHaveLength(1);
    expect(b.rounds).toHaveLength(0);
  });
});

describe('query and click flow', () => {
  it('runs the full browse flow: query, click, refinement', async () => {
    const { controller } = setup();
    await controller.startSession('rules');
    await controller.submitText(['sneakers']);
    expect(controller.rounds).toHaveLength(1);
    expect(controller.latestDisplayed).toHaveLength(6);
    expect(controller.rounds[0].images).toHaveLength(6);
    expect(controller.rounds[0].context.category).toBe('sneakers');

    const clicked = controller.latestDisplayed[2];
    await controller.clickImage(clicked);
    expect(controller.rounds).toHaveLength(2);
    expect(controller.rounds[1].query.clicked_product_id).toBe(clicked);
    expect(controller.rounds[1].n1).toBe(3);

    await controller.submitText(['red']);
    expect(controller.rounds).toHaveLength(3);
    expect(controller.rounds[2].context.constraints).toEqual({ color: 'red' });
    for (const round of controller.rounds) {
      expect(round.displayed).toHaveLength(6);
    }
  });

  it('never issues a click for a product outside the current grid', async () => {
    const { server, controller } = setup();
    await controller.startSession('rules');
    await controller.submitText(['women']);
    const before = server.requests.length;
    await controller.clickImage('P999999');
    expect(server.requests.length).toBe(before); // request never sent
    expect(controller.rounds).toHaveLength(1);
  });

  it('unknown tokens render as an inline input error, not a banner', async () => {
    const { controller } = setup();
    await controller.startSession('rules');
    await controller.submitText(['warpcore']);
    expect(controller.inputError).toMatch(/warpcore/);
    expect(controller.errorBanner).toBeNull();
    expect(controller.rounds).toHaveLength(0);
  });

  it('rounds mirror server payloads verbatim', async () => {
    const { server, controller } = setup();
    await controller.startSession('rules');
    await controller.submitText(['boots']);
    const serverRound = server.sessions.get(controller.sessionId!)!.rounds[0];
    expect(controller.rounds[0]).toEqual(serverRound);
  });
});

describe('pending-request invariant', () => {
  it('a second submit while one is in flight is dropped', async () => {
    const { server, controller } = setup();
    await controller.startSession('rules');
    const p1 = controller.submitText(['women']);
    const p2 = controller.submitText(['men']); // rejected: pending
    await Promise.all([p1, p2]);
    expect(controller.rounds).toHaveLength(1);
    expect(controller.rounds[0].query.tokens).toEqual(['women']);
    expect(server.requests.filter((r) => r.includes('/query'))).toHaveLength(1);
  });

  it('rapid double click issues a single request', async () => {
    const { server, controller } = setup();
    await controller.startSession('rules');
    await controller.submitText(['women']);
    const pid = controller.latestDisplayed[0];
    const c1 = controller.clickImage(pid);
    const c2 = controller.clickImage(pid);
    await Promise.all([c1, c2]);
    expect(controller.rounds).toHaveLength(2);
    expect(server.requests.filter((r) => r.includes('/click'))).toHaveLength(1);
  });

  it('pending clears after errors so the UI recovers', async () => {
    const { server, controller } = setup();
    await controller.startSession('rules');
    server.offline = true;
    await controller.submitText(['women']);
    expect(controller.pending).toBe(false);
    expect(controller.errorBanner).not.toBeNull();
    server.offline = false;
    await controller.submitText(['women']);
    expect(controller.rounds).toHaveLength(1);
  });
});
