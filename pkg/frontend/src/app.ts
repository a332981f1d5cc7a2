// Browser bootstrap: a small hash-routed shell that renders whatever the API
// declares. All state lives server-side; this file only wires DOM events to
// the client and re-renders from fresh reads.

import { ApiError, EmrClient } from './api.js';
import { escapeHtml } from './html.js';
import { formModelFromDefinition, renderEntryForm, toEntryFields, validateFormValues } from './forms.js';
import { renderMenu } from './menu.js';
import { cardActions, describeApiError, renderWorkspace } from './workspace.js';
import type { ArchetypeDefinition, MenuResponse, PatientCard } from './types.js';

interface AppState {
  client: EmrClient;
  menu: MenuResponse;
  notice: string;
}

const TOKEN_KEY = 'emr.token';

function root(): HTMLElement {
  const el = document.getElementById('app');
  if (el === null) throw new Error('missing #app mount point');
  return el;
}

async function loadMenu(client: EmrClient): Promise<MenuResponse> {
  return client.menu();
}

function currentRoute(): string {
  const hash = window.location.hash;
  return hash.startsWith('#') ? hash.slice(1) : '/';
}

function setNotice(state: AppState, text: string): void {
  state.notice = text;
  const slot = document.getElementById('notice');
  if (slot !== null) slot.textContent = text;
}

async function render(state: AppState): Promise<void> {
  const route = currentRoute() || '/';
  let view: string;
  try {
    view = await viewFor(state, route);
  } catch (error) {
    view = `<p class="error">${escapeHtml(describeApiError(error).notice)}</p>`;
  }
  root().innerHTML =
    renderMenu(state.menu.items) +
    `<p id="notice">${escapeHtml(state.notice)}</p>` +
    `<main>${view}</main>`;
  bindHandlers(state);
}

async function viewFor(state: AppState, route: string): Promise<string> {
  const { client } = state;
  switch (route) {
    case '/':
      return '<h1>Clinic EMR</h1><p>Select a destination from the menu.</p>';
    case '/login':
      return (
        '<form id="login"><label for="username">username</label>' +
        '<input id="username" name="username" required>' +
        '<label for="password">password</label>' +
        '<input id="password" name="password" type="password" required>' +
        '<button type="submit">Sign in</button></form>'
      );
    case '/logout':
      window.localStorage.removeItem(TOKEN_KEY);
      client.setToken(null);
      state.menu = await loadMenu(client);
      window.location.hash = '#/';
      return '<p>Signed out.</p>';
    case '/dashboard': {
      const board = await client.dashboard();
      const rows = Object.entries(board)
        .map(
          ([key, value]) =>
            `<dt>${escapeHtml(key)}</dt><dd>${escapeHtml(JSON.stringify(value))}</dd>`,
        )
        .join('');
      return `<h1>Dashboard</h1><dl>${rows}</dl>`;
    }
    case '/users': {
      const page = await client.listUsers();
      const rows = page.items
        .map(
          (user) =>
            `<li>${escapeHtml(user.username)} — ${escapeHtml(user.role)}` +
            `${user.active ? '' : ' (inactive)'}</li>`,
        )
        .join('');
      return `<h1>Users</h1><ul>${rows}</ul>`;
    }
    case '/patients': {
      const page = await client.listPatients();
      const rows = page.items
        .map(
          (patient) =>
            `<li><a href="#/patients/${escapeHtml(patient.mrn)}">${escapeHtml(patient.mrn)}</a>` +
            ` ${escapeHtml(patient.demographics.full_name)}</li>`,
        )
        .join('');
      return `<h1>Patients</h1><ul>${rows}</ul>`;
    }
    case '/referrals': {
      const page = await client.listReferrals();
      const rows = page.items
        .map(
          (ref) =>
            `<li>${escapeHtml(ref.referral_id)} → ${escapeHtml(ref.target_facility)}` +
            ` (${escapeHtml(ref.reason)})</li>`,
        )
        .join('');
      return `<h1>Referral Letters</h1><ul>${rows}</ul>`;
    }
    case '/medical-support': {
      const catalog = await client.listArchetypes();
      const rows = catalog.items
        .map(
          (def) =>
            `<li><a href="#/archetypes/${escapeHtml(def.archetype_id)}">` +
            `${escapeHtml(def.archetype_id)}</a> (${def.fields.length} fields)</li>`,
        )
        .join('');
      return `<h1>Medical Support</h1><p>Entry forms by archetype:</p><ul>${rows}</ul>`;
    }
    case '/transactions':
      return '<h1>Transactions</h1><p>Open a patient card to record billing items.</p>';
    case '/references':
      return '<h1>Reference</h1><p>Reference vocabularies are managed by administrators.</p>';
    case '/guide':
      return '<h1>User Guide</h1><p>Sign in, open a patient, and work the card through its visit.</p>';
    case '/faq':
      return '<h1>FAQ</h1><p>Ask the front desk to register new patients.</p>';
    default:
      return routeWithParams(state, route);
  }
}

async function routeWithParams(state: AppState, route: string): Promise<string> {
  const { client } = state;
  const patient = route.match(/^\/patients\/([^/]+)$/);
  if (patient !== null) {
    const record = await client.patientRecord(patient[1] ?? '');
    const cards = record.cards
      .map(
        (card) =>
          `<li><a href="#/cards/${escapeHtml(card.card_id)}">${escapeHtml(card.card_id)}</a>` +
          ` ${escapeHtml(card.status)} — ${card.total} ${escapeHtml(card.currency)}</li>`,
      )
      .join('');
    return (
      `<h1>${escapeHtml(record.patient.demographics.full_name)}</h1>` +
      `<p>${escapeHtml(record.patient.mrn)}</p><ul>${cards}</ul>`
    );
  }
  const card = route.match(/^\/cards\/([^/]+)$/);
  if (card !== null) {
    const body = await client.getCard(card[1] ?? '');
    return renderWorkspace(body, state.menu) + (await entryFormsSection(state, body));
  }
  const archetype = route.match(/^\/archetypes\/([^/]+)$/);
  if (archetype !== null) {
    const def = await client.getArchetype(decodeURIComponent(archetype[1] ?? ''));
    return `<h1>${escapeHtml(def.archetype_id)}</h1>` + renderEntryForm(formModelFromDefinition(def));
  }
  return '<p>Not found.</p>';
}

async function entryFormsSection(state: AppState, card: PatientCard): Promise<string> {
  const offersEntry = cardActions(card, state.menu).some((a) => a.kind === 'add_entry');
  if (!offersEntry) return '';
  const catalog = await state.client.listArchetypes();
  const options = catalog.items
    .map((def) => `<option value="${escapeHtml(def.archetype_id)}">${escapeHtml(def.archetype_id)}</option>`)
    .join('');
  return (
    `<section class="author" data-card="${escapeHtml(card.card_id)}">` +
    `<label for="archetype-pick">archetype</label>` +
    `<select id="archetype-pick">${options}</select>` +
    '<div id="entry-form-slot"></div></section>'
  );
}

function bindHandlers(state: AppState): void {
  const { client } = state;
  const login = document.getElementById('login');
  if (login instanceof HTMLFormElement) {
    login.addEventListener('submit', async (event) => {
      event.preventDefault();
      const data = new FormData(login);
      try {
        const session = await client.login(
          String(data.get('username') ?? ''),
          String(data.get('password') ?? ''),
        );
        window.localStorage.setItem(TOKEN_KEY, session.token);
        state.menu = await loadMenu(client);
        setNotice(state, session.must_change_password ? 'please change your password' : '');
        window.location.hash = '#/dashboard';
      } catch (error) {
        setNotice(state, describeApiError(error).notice);
      }
    });
  }

  const pick = document.getElementById('archetype-pick');
  if (pick instanceof HTMLSelectElement) {
    pick.addEventListener('change', async () => {
      const def = await client.getArchetype(pick.value);
      mountEntryForm(state, def);
    });
  }

  for (const button of document.querySelectorAll('button[data-action="transition"]')) {
    button.addEventListener('click', async () => {
      const section = button.closest('section[data-card]');
      const cardId = section?.getAttribute('data-card') ?? '';
      const event = button.getAttribute('data-event') ?? '';
      try {
        await client.transition(cardId, event);
        setNotice(state, `card ${cardId}: ${event} applied`);
      } catch (error) {
        const { notice } = describeApiError(error);
        setNotice(state, notice);
      }
      await render(state);
    });
  }
}

function mountEntryForm(state: AppState, definition: ArchetypeDefinition): void {
  const slot = document.getElementById('entry-form-slot');
  if (slot === null) return;
  const model = formModelFromDefinition(definition);
  slot.innerHTML = renderEntryForm(model);
  const form = slot.querySelector('form');
  if (!(form instanceof HTMLFormElement)) return;
  form.addEventListener('submit', async (event) => {
    event.preventDefault();
    const values: Record<string, string> = {};
    for (const [name, value] of new FormData(form)) {
      values[name] = String(value);
    }
    const violations = validateFormValues(model, values);
    if (violations.length > 0) {
      setNotice(state, violations.map((v) => v.message).join('; '));
      return;
    }
    const cardId = form.closest('section[data-card]')?.getAttribute('data-card') ?? '';
    try {
      await state.client.addEntry(cardId, model.kind, model.archetypeId, toEntryFields(model, values));
      setNotice(state, 'entry saved');
      await render(state);
    } catch (error) {
      setNotice(state, describeApiError(error).notice);
    }
  });
}

export async function boot(): Promise<void> {
  const token = window.localStorage.getItem(TOKEN_KEY);
  const client = new EmrClient(window.location.origin, token);
  let menu: MenuResponse;
  try {
    menu = await loadMenu(client);
  } catch (error) {
    if (error instanceof ApiError && error.status === 401) {
      window.localStorage.removeItem(TOKEN_KEY);
      client.setToken(null);
      menu = await loadMenu(client);
    } else {
      throw error;
    }
  }
  const state: AppState = { client, menu, notice: '' };
  window.addEventListener('hashchange', () => void render(state));
  await render(state);
}

if (typeof document !== 'undefined' && document.getElementById('app') !== null) {
  void boot();
}
