// @vitest-environment happy-dom
import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import type { ApiClient, RecommendRequest, RecommendResponse } from "../src/api.js";
import { setupApp } from "../src/main.js";

const PAGE = `
  <input id="title">
  <textarea id="draft"></textarea>
  <select id="source"></select>
  <div id="banner" hidden></div>
  <section id="cards"></section>
  <textarea id="index-text"></textarea>
  <button id="index-button"></button>
  <button id="undo-button"></button>
`;

function fiveCards(): RecommendResponse {
  return {
    recommendations: [0, 1, 2, 3, 4].map((index) => ({
      paragraph_index: index,
      paragraph_text: `start middle${index} finish`,
      span: { token_start: 1, token_end: 1, text: `middle${index}` },
      p_paragraph: 0.2,
      p_span: 0.2,
      fused: 0.04,
    })),
  };
}

function fakeClient() {
  const calls: RecommendRequest[] = [];
  return {
    calls,
    client: {
      listSources: async () => [{ id: "src0", date: "2012-01-01", paragraph_count: 6 }],
      indexSource: async () => "src0",
      recommend: async (request: RecommendRequest) => {
        calls.push(request);
        return fiveCards();
      },
    } as unknown as ApiClient,
  };
}

beforeEach(() => {
  document.body.innerHTML = PAGE;
  vi.useFakeTimers();
});

afterEach(() => {
  vi.useRealTimers();
});

describe("the editor page", () => {
  it("typing then pausing triggers exactly one recommend call and renders five highlighted cards", async () => {
    const { calls, client } = fakeClient();
    const handles = setupApp(document, client, 500);
    await handles.refreshSources();

    const picker = document.getElementById("source") as HTMLSelectElement;
    picker.value = "src0";
    picker.dispatchEvent(new Event("change"));

    const draft = document.getElementById("draft") as HTMLTextAreaElement;
    for (const text of ["t", "ty", "typ", "typing here"]) {
      draft.value = text;
      draft.setSelectionRange(text.length, text.length);
      draft.dispatchEvent(new Event("input"));
      await vi.advanceTimersByTimeAsync(100);
    }
    expect(calls.length).toBe(0);
    await vi.advanceTimersByTimeAsync(500);
    expect(calls.length).toBe(1);
    expect(calls[0].context).toBe("typing here");
    expect(calls[0].top_k).toBe(5);

    const cards = document.querySelectorAll("#cards .card");
    expect(cards.length).toBe(5);
    for (const [index, card] of Array.from(cards).entries()) {
      const marks = card.querySelectorAll("mark");
      expect(marks.length).toBe(1);
      expect(marks[0].textContent).toBe(`middle${index}`);
    }
  });

  it("clicking a card inserts the quoted span at the cursor", async () => {
    const { client } = fakeClient();
    const handles = setupApp(document, client, 500);
    await handles.refreshSources();
    const picker = document.getElementById("source") as HTMLSelectElement;
    picker.value = "src0";
    picker.dispatchEvent(new Event("change"));

    const draft = document.getElementById("draft") as HTMLTextAreaElement;
    draft.value = "He opened with  and sat.";
    draft.setSelectionRange(15, 15);
    draft.dispatchEvent(new Event("input"));
    await vi.advanceTimersByTimeAsync(600);

    const card = document.querySelector("#cards .card") as HTMLElement;
    expect(card).not.toBeNull();
    card.dispatchEvent(new Event("click"));
    expect(draft.value).toBe('He opened with "middle0" and sat.');

    const undoButton = document.getElementById("undo-button") as HTMLButtonElement;
    undoButton.dispatchEvent(new Event("click"));
    expect(draft.value).toBe("He opened with  and sat.");
  });

  it("surfaces service errors in the banner without blocking", async () => {
    const calls: RecommendRequest[] = [];
    const client = {
      listSources: async () => [{ id: "src0", date: "2012-01-01", paragraph_count: 6 }],
      indexSource: async () => "src0",
      recommend: async (request: RecommendRequest) => {
        calls.push(request);
        throw new Error("boom");
      },
    } as unknown as ApiClient;
    const handles = setupApp(document, client, 500);
    await handles.refreshSources();
    const picker = document.getElementById("source") as HTMLSelectElement;
    picker.value = "src0";
    picker.dispatchEvent(new Event("change"));
    await vi.advanceTimersByTimeAsync(600);

    const banner = document.getElementById("banner") as HTMLElement;
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toContain("boom");

    const draft = document.getElementById("draft") as HTMLTextAreaElement;
    draft.value = "still typing";
    draft.setSelectionRange(12, 12);
    draft.dispatchEvent(new Event("input"));
    await vi.advanceTimersByTimeAsync(600);
    expect(calls.length).toBe(2); // the editor kept going
  });
});
