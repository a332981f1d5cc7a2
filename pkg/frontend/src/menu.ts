// Navigation is entirely server-driven: the client renders the menu the API
// declares for the current session and never filters, reorders, or extends
// it. No role knowledge lives on this side of the wire.

import { attr, escapeHtml } from './html.js';
import type { MenuItem } from './types.js';

export interface NavLink {
  key: string;
  label: string;
  route: string;
}

/** The menu exactly as declared, as plain link descriptors. */
export function navLinks(items: readonly MenuItem[]): NavLink[] {
  return items.map((item) => ({ key: item.key, label: item.label, route: item.route }));
}

/** Render the declared menu as a nav list, one anchor per item, in order. */
export function renderMenu(items: readonly MenuItem[]): string {
  const links = items
    .map(
      (item) =>
        `<li><a${attr('data-key', item.key)}${attr('href', '#' + item.route)}>` +
        `${escapeHtml(item.label)}</a></li>`,
    )
    .join('');
  return `<nav class="menu"><ul>${links}</ul></nav>`;
}

/**
 * Read back the links present in rendered menu markup, in document order.
 * The conformance suite compares this against the server's declaration.
 */
export function linksInMarkup(markup: string): NavLink[] {
  const out: NavLink[] = [];
  const anchor = /<a data-key="([^"]*)" href="#([^"]*)">([^<]*)<\/a>/g;
  for (const match of markup.matchAll(anchor)) {
    out.push({
      key: decodeEntities(match[1] ?? ''),
      route: decodeEntities(match[2] ?? ''),
      label: decodeEntities(match[3] ?? ''),
    });
  }
  return out;
}

function decodeEntities(raw: string): string {
  return raw
    .replace(/&lt;/g, '<')
    .replace(/&gt;/g, '>')
    .replace(/&quot;/g, '"')
    .replace(/&#39;/g, "'")
    .replace(/&amp;/g, '&');
}
