/** Review-loop controller: one current task, one fetched ahead, verdicts
 * through the outbox, progress always re-read from the service. */

import type { AnnotationApi } from "./api.js";
import type { VerdictOutbox } from "./outbox.js";
import { toTaskView, type TaskView } from "./taskView.js";
import type { Progress, Verdict } from "./types.js";

export type ReviewAction = "accept" | "reject" | "skip";

export interface ReviewState {
  current: TaskView | null;
  progress: Progress | null;
  /** true while the last delivery attempt failed; verdicts keep queueing */
  offline: boolean;
  /** verdicts accepted locally but not yet acknowledged by the service */
  queued: number;
  /** no pending tasks remain (other than ones skipped this session) */
  exhausted: boolean;
}

const FETCH_BATCH = 25;

export function verdictFor(action: ReviewAction): Verdict | null {
  if (action === "accept") return "correct";
  if (action === "reject") return "incorrect";
  return null;
}

export class ReviewLoop {
  private buffer: TaskView[] = [];
  private skipped: string[] = [];
  private seen = new Set<string>();
  private state: ReviewState = {
    current: null,
    progress: null,
    offline: false,
    queued: 0,
    exhausted: false,
  };

  constructor(
    private readonly api: AnnotationApi,
    private readonly outbox: VerdictOutbox,
    private readonly annotator: string,
    private readonly onChange: (state: ReviewState) => void = () => {},
  ) {}

  snapshot(): ReviewState {
    return { ...this.state };
  }

  async start(): Promise<void> {
    await this.refreshProgress();
    await this.advance();
  }

  /** Apply a keyboard/click action to the current task. */
  async act(action: ReviewAction): Promise<void> {
    const task = this.state.current;
    if (!task) return;
    if (action === "skip") {
      // leaves the task pending on the server; revisited once all else is done
      this.skipped.push(task.taskId);
      await this.advance();
      return;
    }
    const verdict = verdictFor(action)!;
    this.outbox.enqueue(task.taskId, verdict, this.annotator);
    this.setState({ queued: this.outbox.size });
    await this.deliverQueued();
    await this.advance();
  }

  /** Retry delivery of queued verdicts (the retry banner's button). */
  async retry(): Promise<void> {
    await this.deliverQueued();
  }

  private async deliverQueued(): Promise<void> {
    const result = await this.outbox.flush();
    const offline = result.remaining > 0;
    this.setState({ offline, queued: result.remaining });
    if (result.delivered > 0) {
      await this.refreshProgress();
    }
  }

  private async refreshProgress(): Promise<void> {
    try {
      this.setState({ progress: await this.api.progress() });
    } catch {
      this.setState({ offline: true });
    }
  }

  private async advance(): Promise<void> {
    // one task ahead is kept in the buffer so the next render is instant
    while (this.buffer.length < 2) {
      const fetched = await this.fetchMore();
      if (!fetched) break;
    }
    const next = this.buffer.shift() ?? null;
    this.setState({ current: next, exhausted: next === null });
    void this.topUp();
  }

  private async topUp(): Promise<void> {
    if (this.buffer.length < 1 && !this.state.exhausted) {
      await this.fetchMore();
    }
  }

  private async fetchMore(): Promise<boolean> {
    let added = 0;
    try {
      const listing = await this.api.listTasks("pending", FETCH_BATCH);
      for (const payload of listing.tasks) {
        if (this.seen.has(payload.task_id)) continue;
        if (this.skipped.includes(payload.task_id)) continue;
        this.seen.add(payload.task_id);
        this.buffer.push(toTaskView(payload));
        added += 1;
      }
      if (added === 0 && this.buffer.length === 0 && this.skipped.length > 0) {
        // nothing new left: offer still-pending skipped tasks one more round
        const stillPending = new Map(listing.tasks.map((t) => [t.task_id, t]));
        for (const id of this.skipped) {
          const payload = stillPending.get(id);
          if (payload) {
            this.buffer.push(toTaskView(payload));
            added += 1;
          }
        }
        this.skipped = [];
      }
    } catch {
      this.setState({ offline: true });
      return false;
    }
    return added > 0;
  }

  private setState(patch: Partial<ReviewState>): void {
    this.state = { ...this.state, ...patch };
    this.onChange(this.snapshot());
  }
}
