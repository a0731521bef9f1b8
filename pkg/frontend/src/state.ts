/** UI session state machine, independent of the DOM.
 *
 * Invariants it enforces:
 *  - at most one in-flight request per session (the pending flag);
 *  - clicks only on products in the latest round's display;
 *  - rounds mirror server responses verbatim (the UI never invents data);
 *  - switching mode starts a fresh session while prior rounds stay
 *    readable as an archived block.
 */

import { ApiClient, ApiError, ResponderMode, RoundRecord } from './api.js';

export interface ArchivedSession {
  sessionId: string;
  mode: ResponderMode;
  rounds: RoundRecord[];
}

export type Listener = () => void;

export class SessionController {
  sessionId: string | null = null;
  mode: ResponderMode = 'rules';
  rounds: RoundRecord[] = [];
  archived: ArchivedSession[] = [];
  pending = false;
  errorBanner: string | null = null;
  inputError: string | null = null;

  private listeners: Listener[] = [];

  constructor(private readonly api: ApiClient) {}

  onChange(fn: Listener): void {
    this.listeners.push(fn);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  get latestDisplayed(): string[] {
    const last = this.rounds[this.rounds.length - 1];
    return last ? last.displayed : [];
  }

  /** Start a session in the given mode; any live session is archived. */
  async startSession(mode: ResponderMode): Promise<void> {
    if (this.pending) return;
    this.pending = true;
    this.errorBanner = null;
    this.inputError = null;
    this.notify();
    try {
      if (this.sessionId !== null && this.rounds.length > 0) {
        this.archived.push({ sessionId: this.sessionId, mode: this.mode, rounds: this.rounds });
      }
      const res = await this.api.createSession(mode);
      this.sessionId = res.session_id;
      this.mode = mode;
      this.rounds = [];
    } catch (err) {
      this.errorBanner = describe(err);
    } finally {
      this.pending = false;
      this.notify();
    }
  }

  /** Submit a text query; unknown-token errors surface inline, not as a banner. */
  async submitText(tokens: string[]): Promise<void> {
    if (this.pending || this.sessionId === null || tokens.length === 0) return;
    this.pending = true;
    this.inputError = null;
    this.notify();
    try {
      const round = await this.api.submitQuery(this.sessionId, tokens);
      this.rounds.push(round);
      this.errorBanner = null;
    } catch (err) {
      if (err instanceof ApiError && err.status === 400) {
        this.inputError = err.message;
      } else {
        this.errorBanner = describe(err);
      }
    } finally {
      this.pending = false;
      this.notify();
    }
  }

  /** Click a displayed product; ignored unless it is on the current grid. */
  async clickImage(productId: string): Promise<void> {
    if (this.pending || this.sessionId === null) return;
    if (!this.latestDisplayed.includes(productId)) return;
    this.pending = true;
    this.notify();
    try {
      const round = await this.api.submitClick(this.sessionId, productId);
      this.rounds.push(round);
      this.errorBanner = null;
    } catch (err) {
      this.errorBanner = describe(err);
    } finally {
      this.pending = false;
      this.notify();
    }
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return err.message;
  if (err instanceof Error) return `server unreachable: ${err.message}`;
  return 'server unreachable';
}
