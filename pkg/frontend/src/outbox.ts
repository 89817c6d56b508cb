/** Local verdict queue so network failures never lose a judgment.
 *
 * A verdict is enqueued before the POST and removed only once the service
 * acknowledges it, so every queued verdict is delivered; the service treats
 * verdict submission as an overwrite per task, so redelivery after an
 * interrupted session converges to the same state. Within one session a
 * flush guard prevents double-posting.
 */

import type { Verdict } from "./types.js";

export interface QueuedVerdict {
  taskId: string;
  verdict: Verdict;
  annotator: string;
  queuedAt: number;
}

export interface OutboxStorage {
  load(): QueuedVerdict[];
  save(entries: QueuedVerdict[]): void;
}

export class MemoryStorage implements OutboxStorage {
  private entries: QueuedVerdict[] = [];

  load(): QueuedVerdict[] {
    return this.entries.map((e) => ({ ...e }));
  }

  save(entries: QueuedVerdict[]): void {
    this.entries = entries.map((e) => ({ ...e }));
  }
}

export class BrowserStorage implements OutboxStorage {
  constructor(private readonly key = "conceptminer.outbox") {}

  load(): QueuedVerdict[] {
    const raw = window.localStorage.getItem(this.key);
    if (!raw) return [];
    try {
      return JSON.parse(raw) as QueuedVerdict[];
    } catch {
      return [];
    }
  }

  save(entries: QueuedVerdict[]): void {
    window.localStorage.setItem(this.key, JSON.stringify(entries));
  }
}

export interface FlushResult {
  delivered: number;
  remaining: number;
}

export type DeliverFn = (entry: QueuedVerdict) => Promise<void>;

export class VerdictOutbox {
  private queue: QueuedVerdict[];
  private flushing = false;

  constructor(
    private readonly storage: OutboxStorage,
    private readonly deliver: DeliverFn,
  ) {
    this.queue = storage.load();
  }

  get size(): number {
    return this.queue.length;
  }

  /** Queue a verdict; a newer verdict for the same task replaces the old one. */
  enqueue(taskId: string, verdict: Verdict, annotator: string, now: number = Date.now()): void {
    this.queue = this.queue.filter((e) => e.taskId !== taskId);
    this.queue.push({ taskId, verdict, annotator, queuedAt: now });
    this.storage.save(this.queue);
  }

  /** Deliver queued verdicts in order. Stops at the first failure, keeping
   * the failed entry and everything behind it. */
  async flush(): Promise<FlushResult> {
    if (this.flushing) return { delivered: 0, remaining: this.queue.length };
    this.flushing = true;
    let delivered = 0;
    try {
      while (this.queue.length > 0) {
        const entry = this.queue[0]!;
        await this.deliver(entry);
        // acknowledged: drop it before attempting the next one
        this.queue.shift();
        this.storage.save(this.queue);
        delivered += 1;
      }
    } catch {
      return { delivered, remaining: this.queue.length };
    } finally {
      this.flushing = false;
    }
    return { delivered, remaining: 0 };
  }
}
