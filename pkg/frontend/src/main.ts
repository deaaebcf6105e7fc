// DOM wiring: title/draft inputs, a source picker fed by GET /sources, a
// paste-and-index helper over POST /sources, and the recommendation cards.

import { ApiClient } from "./api.js";
import type { Recommendation } from "./api.js";
import { DEFAULT_DEBOUNCE_MS, EditorController } from "./editor.js";
import { highlightSegments, spanCharRange } from "./highlight.js";

export interface AppHandles {
  controller: EditorController;
  refreshSources: () => Promise<void>;
}

function renderCard(doc: Document, recommendation: Recommendation,
                    onPick: (r: Recommendation) => void): HTMLElement {
  const card = doc.createElement("article");
  card.className = "card";
  card.tabIndex = 0;

  const score = doc.createElement("div");
  score.className = "card-score";
  score.textContent =
    `#${recommendation.paragraph_index} · fused ${recommendation.fused.toExponential(2)}`;
  card.appendChild(score);

  const body = doc.createElement("p");
  body.className = "card-text";
  const range = recommendation.span === null
    ? null
    : spanCharRange(recommendation.paragraph_text, recommendation.span.text,
                    recommendation.span.token_start);
  for (const segment of highlightSegments(recommendation.paragraph_text, range)) {
    if (segment.highlighted) {
      const mark = doc.createElement("mark");
      mark.textContent = segment.text;
      body.appendChild(mark);
    } else {
      body.appendChild(doc.createTextNode(segment.text));
    }
  }
  card.appendChild(body);
  card.addEventListener("click", () => onPick(recommendation));
  return card;
}

export function setupApp(doc: Document, client: ApiClient,
                         debounceMs: number = DEFAULT_DEBOUNCE_MS): AppHandles {
  const title = doc.getElementById("title") as HTMLInputElement;
  const draft = doc.getElementById("draft") as HTMLTextAreaElement;
  const sourcePicker = doc.getElementById("source") as HTMLSelectElement;
  const cards = doc.getElementById("cards") as HTMLElement;
  const banner = doc.getElementById("banner") as HTMLElement;
  const indexText = doc.getElementById("index-text") as HTMLTextAreaElement;
  const indexButton = doc.getElementById("index-button") as HTMLButtonElement;
  const undoButton = doc.getElementById("undo-button") as HTMLButtonElement;

  const controller = new EditorController(
    (request) => client.recommend(request),
    (state) => {
      banner.textContent = state.error ?? "";
      banner.hidden = state.error === null;
      if (draft.value !== state.draft) {
        draft.value = state.draft;
        draft.setSelectionRange(state.cursor, state.cursor);
      }
      cards.replaceChildren();
      for (const recommendation of state.lastResponse?.recommendations ?? []) {
        cards.appendChild(renderCard(doc, recommendation, (picked) => {
          controller.insertQuote(picked);
          draft.focus();
        }));
      }
    },
    debounceMs,
  );

  title.addEventListener("input", () => controller.setTitle(title.value));
  const syncDraft = () =>
    controller.setDraft(draft.value, draft.selectionStart ?? draft.value.length);
  draft.addEventListener("input", syncDraft);
  draft.addEventListener("click", syncDraft);
  draft.addEventListener("keyup", syncDraft);
  sourcePicker.addEventListener("change", () =>
    controller.setSource(sourcePicker.value || null));
  undoButton.addEventListener("click", () => {
    controller.undo();
    draft.focus();
  });

  const refreshSources = async () => {
    const sources = await client.listSources();
    sourcePicker.replaceChildren();
    const blank = doc.createElement("option");
    blank.value = "";
    blank.textContent = "choose a source";
    sourcePicker.appendChild(blank);
    for (const source of sources) {
      const option = doc.createElement("option");
      option.value = source.id;
      option.textContent = `${source.id} (${source.paragraph_count} paragraphs, ${source.date})`;
      sourcePicker.appendChild(option);
    }
  };

  indexButton.addEventListener("click", () => {
    void (async () => {
      try {
        const payload = JSON.parse(indexText.value);
        const id = await client.indexSource(payload);
        indexText.value = "";
        await refreshSources();
        sourcePicker.value = id;
        controller.setSource(id);
      } catch (error) {
        banner.textContent = error instanceof Error ? error.message : String(error);
        banner.hidden = false;
      }
    })();
  });

  return { controller, refreshSources };
}

