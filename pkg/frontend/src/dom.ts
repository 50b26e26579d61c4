import { SteerPanel } from "./panel.js";
import { compareRows } from "./ranking.js";
import { compareActive, sessionToQuery } from "./session.js";
import { UserBrowser } from "./userlist.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text) node.textContent = text;
  return node;
}

export function renderUserBrowser(browser: UserBrowser, root: HTMLElement, onSelect: (user: string) => void): void {
  root.replaceChildren();
  if (browser.banner) {
    const banner = el("div", { class: "banner" }, browser.banner);
    const retry = el("button", {}, "retry");
    retry.onclick = () => void browser.retry().then(() => renderUserBrowser(browser, root, onSelect));
    banner.append(" ", retry);
    root.append(banner);
    return;
  }
  const list = el("ul", { class: "users" });
  for (const user of browser.users) {
    const item = el("li");
    const link = el("a", { href: "#" }, user);
    link.onclick = (event) => {
      event.preventDefault();
      onSelect(user);
    };
    item.append(link);
    list.append(item);
  }
  root.append(list);
  const nav = el("div", { class: "pager" });
  const prev = el("button", {}, "prev");
  const next = el("button", {}, "next");
  prev.disabled = browser.page === 0;
  next.disabled = browser.page >= browser.pageCount - 1;
  prev.onclick = () => void browser.load(browser.page - 1).then(() => renderUserBrowser(browser, root, onSelect));
  next.onclick = () => void browser.load(browser.page + 1).then(() => renderUserBrowser(browser, root, onSelect));
  nav.append(prev, el("span", {}, ` page ${browser.page + 1}/${browser.pageCount} `), next);
  root.append(nav);
}

export function renderHistory(browser: UserBrowser, root: HTMLElement): void {
  root.replaceChildren();
  if (browser.historyError) {
    root.append(el("div", { class: "error" }, browser.historyError));
    return;
  }
  if (!browser.history) return;
  const note = browser.history.truncated ? " (20 most recent shown)" : "";
  root.append(el("h3", {}, `history of ${browser.history.user}${note}`));
  const list = el("ol", { class: "history" });
  for (const item of browser.history.items) {
    list.append(el("li", { value: String(item.position) }, item.id));
  }
  root.append(list);
}

export function renderPanel(panel: SteerPanel, root: HTMLElement): void {
  root.replaceChildren();
  const drafts = el("div", { class: "drafts" });
  panel.session.drafts.forEach((draft, index) => {
    const row = el("div", { class: "draft" });
    const input = el("input", { value: draft.text });
    input.oninput = () => panel.editDraft(index, input.value);
    const badge = el("span", { class: `badge ${draft.sentiment}` }, draft.sentiment);
    row.append(input, badge);
    if (draft.sentiment === "negative") {
      const invert = el("button", {}, "invert");
      invert.onclick = () => {
        panel.invertDraft(index);
        renderPanel(panel, root);
      };
      row.append(invert);
    }
    const remove = el("button", {}, "remove");
    remove.onclick = () => {
      panel.removeDraft(index);
      renderPanel(panel, root);
    };
    row.append(remove);
    drafts.append(row);
  });
  const add = el("button", {}, "add preference");
  add.onclick = () => {
    panel.addDraft("");
    renderPanel(panel, root);
  };
  drafts.append(add);
  root.append(drafts);

  if (panel.error) {
    const status = panel.error.status === null ? "" : ` (${panel.error.status})`;
    root.append(el("div", { class: "error" }, `${panel.error.message}${status}`));
  }

  const table = el("table", { class: "ranking" });
  const head = el("tr");
  for (const column of ["rank", "item", "score", "moved"]) head.append(el("th", {}, column));
  table.append(head);
  for (const row of panel.rows) {
    const tr = el("tr");
    const moved = row.movement === null ? "new" : row.movement === 0 ? "" : row.movement > 0 ? `↑${row.movement}` : `↓${-row.movement}`;
    tr.append(
      el("td", {}, String(row.rank)),
      el("td", {}, row.id),
      el("td", {}, row.score.toFixed(4)),
      el("td", { class: row.movement !== null && row.movement > 0 ? "rose" : "fell" }, moved),
    );
    table.append(tr);
  }
  root.append(table);

  if (compareActive(panel.session)) {
    const [a, b] = panel.session.responses;
    root.append(el("h3", {}, "compare (previous vs current)"));
    const cmp = el("table", { class: "compare" });
    const h = el("tr");
    for (const column of ["item", "rank before", "rank after"]) h.append(el("th", {}, column));
    cmp.append(h);
    for (const row of compareRows(a, b)) {
      const tr = el("tr");
      tr.append(
        el("td", {}, row.id),
        el("td", {}, row.rankA === null ? "-" : String(row.rankA)),
        el("td", {}, row.rankB === null ? "-" : String(row.rankB)),
      );
      cmp.append(tr);
    }
    root.append(cmp);
  }

  history.replaceState(null, "", `?${sessionToQuery(panel.session)}`);
}
