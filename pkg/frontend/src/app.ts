/** DOM wiring: mode toggle, query box with vocabulary autocomplete, the
 * 2x3 clickable product grid, and the session history panel. All product
 * ids and image URLs come from server responses. */

import { ApiClient, ContextSnapshot, RoundRecord, ResponderMode, VocabInfo } from './api.js';
import { Suggestion, buildSuggestionPool, suggest, tokenize } from './autocomplete.js';
import { SessionController } from './state.js';

const MODES: ResponderMode[] = ['rules', 'agent', 'random'];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function contextLine(ctx: ContextSnapshot): string {
  const parts: string[] = [];
  if (ctx.gender) parts.push(`gender: ${ctx.gender}`);
  if (ctx.category) parts.push(`category: ${ctx.category}`);
  for (const [attr, tok] of Object.entries(ctx.constraints)) {
    parts.push(`${attr}: ${tok}`);
  }
  return parts.length ? parts.join(' · ') : 'no context yet';
}

function queryLabel(round: RoundRecord): string {
  if (round.query.kind === 'text') {
    return (round.query.tokens ?? []).join(' ');
  }
  return `clicked ${round.query.clicked_product_id}`;
}

export function startApp(root: HTMLElement, api: ApiClient): SessionController {
  const controller = new SessionController(api);
  let pool: Suggestion[] = [];

  root.innerHTML = '';
  const banner = el('div', 'banner hidden');
  const toolbar = el('div', 'toolbar');
  const modeButtons = new Map<ResponderMode, HTMLButtonElement>();
  for (const mode of MODES) {
    const btn = el('button', 'mode-btn', mode);
    btn.addEventListener('click', () => void controller.startSession(mode));
    modeButtons.set(mode, btn);
    toolbar.appendChild(btn);
  }

  const form = el('form', 'query-form');
  const input = el('input') as HTMLInputElement;
  input.placeholder = 'show me... (vocabulary tokens)';
  input.autocomplete = 'off';
  const send = el('button', 'send-btn', 'send') as HTMLButtonElement;
  const suggestions = el('div', 'suggestions');
  const inputError = el('div', 'input-error hidden');
  form.append(input, send);

  const grid = el('div', 'grid');
  const historyPanel = el('div', 'history');
  root.append(banner, toolbar, form, suggestions, inputError, grid, historyPanel);

  form.addEventListener('submit', (ev) => {
    ev.preventDefault();
    const tokens = tokenize(input.value, pool);
    if (tokens.length === 0) return;
    void controller.submitText(tokens).then(() => {
      if (!controller.inputError) input.value = '';
    });
  });

  input.addEventListener('input', () => {
    suggestions.innerHTML = '';
    const lastWord = input.value.split(/\s+/).pop() ?? '';
    for (const s of suggest(pool, lastWord)) {
      const chip = el('button', 'chip', `${s.token} (${s.attribute})`);
      chip.type = 'button';
      chip.addEventListener('click', () => {
        const words = input.value.trim().split(/\s+/);
        words.pop();
        words.push(s.token);
        input.value = words.join(' ') + ' ';
        suggestions.innerHTML = '';
        input.focus();
      });
      suggestions.appendChild(chip);
    }
  });

  function renderGrid(): void {
    grid.innerHTML = '';
    const latest = controller.rounds[controller.rounds.length - 1];
    if (!latest) {
      grid.appendChild(el('div', 'placeholder',
        'start with a text query, e.g. "women sneakers"'));
      return;
    }
    latest.displayed.forEach((pid, i) => {
      const card = el('button', 'card');
      card.type = 'button';
      card.disabled = controller.pending;
      const img = el('img') as HTMLImageElement;
      img.src = latest.images[i];
      img.alt = pid;
      card.append(img, el('div', 'card-id', pid));
      card.addEventListener('click', () => void controller.clickImage(pid));
      grid.appendChild(card);
    });
  }

  function renderRounds(target: HTMLElement, rounds: RoundRecord[]): void {
    for (const round of [...rounds].reverse()) {
      const entry = el('div', 'round');
      const head = el('div', 'round-head');
      head.appendChild(el('span', `qkind qkind-${round.query.kind}`,
        round.query.kind === 'text' ? 'text' : 'click'));
      head.appendChild(el('span', 'qtext', queryLabel(round)));
      if (round.n1 !== null) {
        head.appendChild(el('span', 'n1', `n1=${round.n1}`));
      }
      entry.appendChild(head);
      const thumbs = el('div', 'thumbs');
      round.displayed.forEach((pid, i) => {
        const img = el('img', 'thumb') as HTMLImageElement;
        img.src = round.images[i];
        img.alt = pid;
        img.title = pid;
        thumbs.appendChild(img);
      });
      entry.appendChild(thumbs);
      entry.appendChild(el('div', 'ctx', contextLine(round.context)));
      target.appendChild(entry);
    }
  }

  function renderHistory(): void {
    historyPanel.innerHTML = '';
    if (controller.rounds.length === 0 && controller.archived.length === 0) {
      historyPanel.appendChild(el('div', 'placeholder', 'no rounds yet'));
      return;
    }
    renderRounds(historyPanel, controller.rounds);
    for (const old of [...controller.archived].reverse()) {
      const block = el('div', 'archived');
      block.appendChild(el('div', 'archived-head',
        `earlier ${old.mode} session ${old.sessionId}`));
      renderRounds(block, old.rounds);
      historyPanel.appendChild(block);
    }
  }

  function render(): void {
    banner.textContent = controller.errorBanner ?? '';
    banner.classList.toggle('hidden', controller.errorBanner === null);
    inputError.textContent = controller.inputError ?? '';
    inputError.classList.toggle('hidden', controller.inputError === null);
    for (const [mode, btn] of modeButtons) {
      btn.classList.toggle('active', controller.mode === mode && controller.sessionId !== null);
      btn.disabled = controller.pending;
    }
    send.disabled = controller.pending || controller.sessionId === null;
    input.disabled = controller.sessionId === null;
    renderGrid();
    renderHistory();
  }

  controller.onChange(render);
  render();

  void api.vocab()
    .then((vocab: VocabInfo) => { pool = buildSuggestionPool(vocab); })
    .catch(() => { /* autocomplete silently unavailable; queries still work */ });
  void controller.startSession('rules');
  return controller;
}

declare global {
  interface Window { mmbrowse?: SessionController }
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  const api = new ApiClient((url, init) => fetch(url, init));
  window.mmbrowse = startApp(document.getElementById('app') as HTMLElement, api);
}
