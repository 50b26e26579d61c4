import { HistoryResponse, ServiceClient, ServiceHttpError } from "./types.js";

/** Paginated user browser with inline error handling: a dead service shows
 * a retryable banner, a stale user link shows an inline error, never a
 * crash. */
export class UserBrowser {
  users: string[] = [];
  total = 0;
  page = 0;
  banner: string | null = null;
  selected: string | null = null;
  history: HistoryResponse | null = null;
  historyError: string | null = null;

  constructor(
    private readonly client: ServiceClient,
    readonly pageSize = 10,
  ) {}

  get pageCount(): number {
    return Math.max(1, Math.ceil(this.total / this.pageSize));
  }

  async load(page = this.page): Promise<void> {
    try {
      const response = await this.client.listUsers(page * this.pageSize, this.pageSize);
      this.users = response.users;
      this.total = response.total;
      this.page = page;
      this.banner = null;
    } catch (err) {
      this.banner = `service unreachable: ${err instanceof Error ? err.message : String(err)}`;
    }
  }

  async retry(): Promise<void> {
    await this.load(this.page);
  }

  async select(user: string): Promise<void> {
    this.selected = user;
    this.history = null;
    this.historyError = null;
    try {
      this.history = await this.client.history(user);
    } catch (err) {
      if (err instanceof ServiceHttpError && err.status === 404) {
        this.historyError = `no such user: ${user}`;
      } else {
        this.historyError = err instanceof Error ? err.message : String(err);
      }
    }
  }
}
