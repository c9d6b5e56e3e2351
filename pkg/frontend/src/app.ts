import {
  ApiError,
  checkHealth,
  generateTitles,
  type FetchLike,
  type GenerateResponse,
  type LanguageId,
} from "./api";
import { canSubmit, initialState, LANGUAGES, type UiState } from "./state";

export interface AppOptions {
  baseUrl?: string;
  beamWidth?: number;
  numTitles?: number;
  fetchFn?: FetchLike;
  clipboard?: (text: string) => Promise<void>;
  skipHealthCheck?: boolean;
}

export const APP_HTML = `
  <header>
    <h1>titleforge</h1>
    <p class="tagline">Suggest a question title from your problem description and code.</p>
  </header>
  <section class="inputs">
    <label>Language
      <select id="language"></select>
    </label>
    <label>Problem description
      <textarea id="description" rows="6"
        placeholder="Describe what you are trying to do and what goes wrong"></textarea>
    </label>
    <label>Code snippet
      <textarea id="code" rows="8" placeholder="Paste the relevant code"></textarea>
    </label>
    <div class="actions">
      <button id="generate" disabled>Generate titles</button>
      <button id="clear" type="button">Clear results</button>
      <span id="status" role="status"></span>
    </div>
    <p id="error" class="error" hidden></p>
  </section>
  <section class="results">
    <ol id="results"></ol>
    <p id="notice" role="status" hidden></p>
  </section>
  <details class="settings">
    <summary>Settings</summary>
    <label>Service address
      <input id="base-url" type="text" placeholder="http://127.0.0.1:8765" />
    </label>
  </details>
`;

function defaultClipboard(text: string): Promise<void> {
  if (typeof navigator !== "undefined" && navigator.clipboard) {
    return navigator.clipboard.writeText(text);
  }
  return Promise.reject(new Error("clipboard unavailable"));
}

export function createApp(root: HTMLElement, options: AppOptions = {}) {
  root.innerHTML = APP_HTML;
  const state: UiState = initialState();
  const beamWidth = options.beamWidth ?? 5;
  const numTitles = options.numTitles ?? 3;
  const clipboard = options.clipboard ?? defaultClipboard;

  const el = {
    language: root.querySelector<HTMLSelectElement>("#language")!,
    description: root.querySelector<HTMLTextAreaElement>("#description")!,
    code: root.querySelector<HTMLTextAreaElement>("#code")!,
    generate: root.querySelector<HTMLButtonElement>("#generate")!,
    clear: root.querySelector<HTMLButtonElement>("#clear")!,
    status: root.querySelector<HTMLSpanElement>("#status")!,
    error: root.querySelector<HTMLParagraphElement>("#error")!,
    results: root.querySelector<HTMLOListElement>("#results")!,
    notice: root.querySelector<HTMLParagraphElement>("#notice")!,
    baseUrl: root.querySelector<HTMLInputElement>("#base-url")!,
  };

  for (const lang of LANGUAGES) {
    const option = document.createElement("option");
    option.value = lang.id;
    option.textContent = lang.label;
    el.language.appendChild(option);
  }
  el.language.value = state.language;
  el.baseUrl.value = options.baseUrl ?? "";

  function renderControls() {
    el.generate.disabled = !canSubmit(state);
    el.status.textContent = state.inFlight ? "generating…" : "";
  }

  function renderError() {
    el.error.hidden = state.error === null;
    el.error.textContent = state.error ?? "";
  }

  function renderResults() {
    el.results.replaceChildren();
    state.results.forEach((title, index) => {
      const item = document.createElement("li");
      const text = document.createElement("span");
      text.className = "title-text";
      text.textContent = title.text;
      const score = document.createElement("span");
      score.className = "score";
      score.textContent = title.normalized_score.toFixed(3);
      const copy = document.createElement("button");
      copy.type = "button";
      copy.className = "copy";
      copy.textContent = "Copy";
      copy.addEventListener("click", () => copyTitle(index));
      item.append(text, score, copy);
      el.results.appendChild(item);
    });
  }

  function notice(message: string) {
    el.notice.hidden = false;
    el.notice.textContent = message;
  }

  function syncInputs() {
    state.language = el.language.value as LanguageId;
    state.description = el.description.value;
    state.code = el.code.value;
    renderControls();
  }

  async function submitGenerate(): Promise<void> {
    if (!canSubmit(state)) return; // covers empty inputs and in-flight
    state.inFlight = true;
    el.notice.hidden = true;
    renderControls();
    try {
      const response: GenerateResponse = await generateTitles(
        el.baseUrl.value.trim(),
        {
          language: state.language,
          description: state.description,
          code: state.code,
          beam_width: beamWidth,
          num_titles: numTitles,
        },
        options.fetchFn,
      );
      state.results = response.titles;
      state.error = null;
      renderResults();
    } catch (err) {
      // Keep prior results and the user's inputs; just surface the failure.
      state.error =
        err instanceof ApiError
          ? err.field
            ? `${err.field}: ${err.message}`
            : err.message
          : `service unreachable: ${String(err)}`;
    } finally {
      state.inFlight = false;
      renderControls();
      renderError();
    }
  }

  async function copyTitle(index: number): Promise<void> {
    const title = state.results[index];
    if (!title) {
      notice("nothing to copy");
      return;
    }
    try {
      await clipboard(title.text);
      notice("copied");
    } catch {
      notice("copy failed");
    }
  }

  function clearResults() {
    state.results = [];
    renderResults();
  }

  el.language.addEventListener("change", syncInputs);
  el.description.addEventListener("input", syncInputs);
  el.code.addEventListener("input", syncInputs);
  el.generate.addEventListener("click", () => void submitGenerate());
  el.clear.addEventListener("click", clearResults);

  renderControls();
  renderError();
  renderResults();

  if (!options.skipHealthCheck) {
    void checkHealth(el.baseUrl.value.trim(), options.fetchFn)
      .then((health) => {
        el.status.textContent = health.ready ? "" : "service warming up…";
      })
      .catch(() => {
        el.status.textContent = "service unreachable";
      });
  }

  return { state, elements: el, submitGenerate, copyTitle, clearResults };
}
