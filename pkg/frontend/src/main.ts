import { HttpServiceClient } from "./api.js";
import { renderHistory, renderPanel, renderUserBrowser } from "./dom.js";
import { SteerPanel } from "./panel.js";
import { sessionFromQuery } from "./session.js";
import { UserBrowser } from "./userlist.js";

interface ConsoleConfig {
  serviceBaseUrl: string;
}

async function boot(): Promise<void> {
  const config = (await fetch("./config.json").then((r) => r.json())) as ConsoleConfig;
  const client = new HttpServiceClient(config.serviceBaseUrl);

  const session = sessionFromQuery(window.location.search);
  const browser = new UserBrowser(client);
  const panel = new SteerPanel(client, session);

  const usersRoot = document.getElementById("users")!;
  const historyRoot = document.getElementById("history")!;
  const panelRoot = document.getElementById("panel")!;

  panel.onChange(() => renderPanel(panel, panelRoot));

  const select = (user: string) => {
    void browser.select(user).then(() => renderHistory(browser, historyRoot));
    panel.setUser(user);
    renderPanel(panel, panelRoot);
  };

  await browser.load(0);
  renderUserBrowser(browser, usersRoot, select);
  if (session.user) select(session.user);
  renderPanel(panel, panelRoot);
}

void boot();
