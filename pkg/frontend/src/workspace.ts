// The card workspace offers exactly the actions the server's own declarations
// permit: transition buttons come from the published state-machine table, and
// authoring affordances from the session's capability list. The only local
// knowledge is clinical phase — which card statuses an entry, lab result, or
// referral is medically valid in — mirroring the server's conflict rules, not
// its permission rules.

import { ApiError } from './api.js';
import { attr, escapeHtml } from './html.js';
import type { CardStatus, MenuResponse, PatientCard, TransitionRule } from './types.js';

export type WorkspaceAction =
  | { kind: 'transition'; event: string; to: CardStatus; label: string }
  | { kind: 'add_entry'; label: string }
  | { kind: 'add_lab_result'; label: string }
  | { kind: 'add_item'; label: string }
  | { kind: 'refer'; label: string };

// Clinical-phase gates (the server answers 409 outside them, not 403):
// entries are authored during the doctor exam, lab results during the lab
// exam, referrals any time after the examination has begun. Billing items
// have no phase gate.
const ENTRY_STATUSES: readonly CardStatus[] = ['in_doctor_exam'];
const LAB_STATUSES: readonly CardStatus[] = ['in_lab_exam'];
const REFERRAL_STATUSES: readonly CardStatus[] = ['in_doctor_exam', 'in_lab_exam', 'complete'];

function can(menu: MenuResponse, action: string, resource: string): boolean {
  return menu.capabilities.some((c) => c.action === action && c.resource === resource);
}

/** The transitions this session may fire from the card's current status. */
export function availableTransitions(card: PatientCard, menu: MenuResponse): TransitionRule[] {
  return menu.transitions.filter(
    (rule) => rule.from === card.status && rule.role === menu.role,
  );
}

function transitionLabel(event: string): string {
  return event.replace(/_/g, ' ');
}

/** Every action the workspace should offer for this card and session. */
export function cardActions(card: PatientCard, menu: MenuResponse): WorkspaceAction[] {
  const actions: WorkspaceAction[] = availableTransitions(card, menu).map((rule) => ({
    kind: 'transition',
    event: rule.event,
    to: rule.to as CardStatus,
    label: transitionLabel(rule.event),
  }));
  if (can(menu, 'create', 'clinical_entry') && ENTRY_STATUSES.includes(card.status)) {
    actions.push({ kind: 'add_entry', label: 'add clinical entry' });
  }
  if (can(menu, 'create', 'lab_result') && LAB_STATUSES.includes(card.status)) {
    actions.push({ kind: 'add_lab_result', label: 'file lab result' });
  }
  if (can(menu, 'create', 'transaction_item')) {
    actions.push({ kind: 'add_item', label: 'add billing item' });
  }
  if (can(menu, 'create', 'referral') && REFERRAL_STATUSES.includes(card.status)) {
    actions.push({ kind: 'refer', label: 'write referral letter' });
  }
  return actions;
}

/** Render the card header plus one button per available action. */
export function renderWorkspace(card: PatientCard, menu: MenuResponse): string {
  const buttons = cardActions(card, menu)
    .map((action) => {
      const event = action.kind === 'transition' ? action.event : '';
      return (
        `<button${attr('data-action', action.kind)}` +
        (event ? attr('data-event', event) : '') +
        `>${escapeHtml(action.label)}</button>`
      );
    })
    .join('');
  return (
    `<section class="workspace"${attr('data-card', card.card_id)}>` +
    `<h2>${escapeHtml(card.card_id)} — visit ${card.seq_no} of ${escapeHtml(card.mrn)}</h2>` +
    `<p class="status">status: <strong${attr('data-status', card.status)}>` +
    `${escapeHtml(card.status)}</strong></p>` +
    `<p class="total">billed: ${card.total} ${escapeHtml(card.currency)}` +
    ` (${card.items.length} items, ${card.entries.length} entries,` +
    ` ${card.lab_results.length} lab results)</p>` +
    `<div class="actions">${buttons}</div></section>`
  );
}

export interface ErrorNotice {
  notice: string;
  /** True when the client's picture is stale and the card should be re-fetched. */
  shouldRefresh: boolean;
}

/**
 * Translate a failed call into a non-destructive notice. Denials and state
 * conflicts never discard the user's view — at most they trigger a re-read.
 */
export function describeApiError(error: unknown): ErrorNotice {
  if (!(error instanceof ApiError)) {
    return { notice: 'something went wrong — please retry', shouldRefresh: false };
  }
  switch (error.status) {
    case 401:
      return { notice: 'your session has ended — please sign in again', shouldRefresh: false };
    case 403:
      return { notice: `not available to your role: ${error.message}`, shouldRefresh: false };
    case 404:
      return { notice: 'that record no longer exists', shouldRefresh: true };
    case 409:
      return { notice: `the card has moved on: ${error.message}`, shouldRefresh: true };
    case 422:
      return { notice: `the server rejected the input: ${error.message}`, shouldRefresh: false };
    default:
      return { notice: error.message, shouldRefresh: false };
  }
}
