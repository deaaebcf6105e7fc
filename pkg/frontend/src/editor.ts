// Editor state machine: debounced recommendation fetching with latest-wins
// response handling, quote insertion at the cursor, and an undo stack.

import type { Recommendation, RecommendRequest, RecommendResponse } from "./api.js";

export const DEFAULT_DEBOUNCE_MS = 500;
export const DEFAULT_TOP_K = 5;

export interface EditorState {
  title: string;
  draft: string;
  cursor: number;
  sourceId: string | null;
  lastResponse: RecommendResponse | null;
  error: string | null;
  pending: boolean;
}

export type RecommendFn = (request: RecommendRequest) => Promise<RecommendResponse>;

interface SentRequest {
  source_id: string;
  title: string;
  context: string;
}

export class EditorController {
  private state: EditorState = {
    title: "",
    draft: "",
    cursor: 0,
    sourceId: null,
    lastResponse: null,
    error: null,
    pending: false,
  };
  private timer: ReturnType<typeof setTimeout> | null = null;
  private issued = 0; // monotonic request ids; only the newest may render
  private rendered = 0;
  private lastSent: SentRequest | null = null;
  private undoStack: Array<{ draft: string; cursor: number }> = [];

  constructor(
    private recommendFn: RecommendFn,
    private onChange: (state: EditorState) => void = () => {},
    private debounceMs: number = DEFAULT_DEBOUNCE_MS,
    private topK: number = DEFAULT_TOP_K,
  ) {}

  snapshot(): EditorState {
    return { ...this.state };
  }

  /** The context sent to the service: the draft strictly before the cursor. */
  contextBeforeCursor(): string {
    return this.state.draft.slice(0, this.state.cursor);
  }

  setTitle(title: string): void {
    if (title === this.state.title) return;
    this.state.title = title;
    this.emit();
    this.schedule();
  }

  setDraft(draft: string, cursor: number): void {
    if (draft === this.state.draft && cursor === this.state.cursor) return;
    this.state.draft = draft;
    this.state.cursor = Math.max(0, Math.min(cursor, draft.length));
    this.emit();
    this.schedule();
  }

  setSource(sourceId: string | null): void {
    if (sourceId === this.state.sourceId) return;
    this.state.sourceId = sourceId;
    this.state.lastResponse = null;
    this.lastSent = null;
    this.emit();
    this.schedule();
  }

  /** Debounce: (re)arm the timer; the request fires after a typing pause. */
  private schedule(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.fire();
    }, this.debounceMs);
  }

  private async fire(): Promise<void> {
    if (this.state.sourceId === null) return;
    const payload: SentRequest = {
      source_id: this.state.sourceId,
      title: this.state.title,
      context: this.contextBeforeCursor(),
    };
    if (
      this.lastSent !== null &&
      this.lastSent.source_id === payload.source_id &&
      this.lastSent.title === payload.title &&
      this.lastSent.context === payload.context
    ) {
      return; // nothing changed since the last request
    }
    this.lastSent = payload;
    const id = ++this.issued;
    this.state.pending = true;
    this.emit();
    try {
      const response = await this.recommendFn({ ...payload, top_k: this.topK });
      if (id <= this.rendered || id !== this.issued) return; // stale
      this.rendered = id;
      this.state.lastResponse = response;
      this.state.error = null;
    } catch (error) {
      if (id !== this.issued) return; // stale failure: ignore silently
      this.state.error = error instanceof Error ? error.message : String(error);
    } finally {
      if (id === this.issued) {
        this.state.pending = false;
        this.emit();
      }
    }
  }

  /** Insert the card's span at the cursor, wrapped in quotation marks. */
  insertQuote(recommendation: Recommendation): void {
    if (recommendation.span === null) return;
    this.undoStack.push({ draft: this.state.draft, cursor: this.state.cursor });
    const quoted = `"${recommendation.span.text}"`;
    const { draft, cursor } = this.state;
    this.state.draft = draft.slice(0, cursor) + quoted + draft.slice(cursor);
    this.state.cursor = cursor + quoted.length;
    this.emit();
    this.schedule();
  }

  undo(): boolean {
    const previous = this.undoStack.pop();
    if (previous === undefined) return false;
    this.state.draft = previous.draft;
    this.state.cursor = previous.cursor;
    this.emit();
    this.schedule();
    return true;
  }

  private emit(): void {
    this.onChange(this.snapshot());
  }
}
