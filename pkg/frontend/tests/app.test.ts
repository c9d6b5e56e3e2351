import { describe, expect, it } from "vitest";

import { createApp } from "../src/app";
import type { FetchLike, GenerateResponse } from "../src/api";
import { canSubmit, initialState } from "../src/state";

const THREE_TITLES: GenerateResponse = {
  titles: [
    { text: "sort a list of maps by value", normalized_score: -0.21 },
    { text: "sorting maps in java streams", normalized_score: -0.35 },
    { text: "how to sort <code> & keep keys", normalized_score: -0.58 },
  ],
  model_id: "abc123",
  elapsed_ms: 12.5,
};

function jsonResponse(payload: unknown, status = 200): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

interface StubCall {
  url: string;
  init?: RequestInit;
}

function stubFetch(handler: (url: string, init?: RequestInit) => Response | Promise<Response>) {
  const calls: StubCall[] = [];
  const fetchFn: FetchLike = async (url, init) => {
    calls.push({ url, init });
    return handler(url, init);
  };
  return { fetchFn, calls };
}

function mount(fetchFn: FetchLike, extra: Record<string, unknown> = {}) {
  document.body.innerHTML = '<div id="app"></div>';
  const root = document.getElementById("app") as HTMLElement;
  return createApp(root, {
    baseUrl: "http://svc.test",
    fetchFn,
    skipHealthCheck: true,
    ...extra,
  });
}

function setInputs(app: ReturnType<typeof createApp>, description: string, code: string) {
  app.elements.description.value = description;
  app.elements.description.dispatchEvent(new Event("input"));
  app.elements.code.value = code;
  app.elements.code.dispatchEvent(new Event("input"));
}

describe("state", () => {
  it("defaults to java with nothing submittable", () => {
    const state = initialState();
    expect(state.language).toBe("java");
    expect(canSubmit(state)).toBe(false);
  });

  it("one non-empty input is enough", () => {
    const state = initialState();
    state.code = "xs.sort()";
    expect(canSubmit(state)).toBe(true);
    state.inFlight = true;
    expect(canSubmit(state)).toBe(false);
  });
});

describe("generation", () => {
  it("renders ranked titles from a successful response", async () => {
    const { fetchFn, calls } = stubFetch(() => jsonResponse(THREE_TITLES));
    const app = mount(fetchFn);
    setInputs(app, "how do i sort a list of maps", "list.sort(cmp)");
    expect(app.elements.generate.disabled).toBe(false);

    await app.submitGenerate();

    const items = [...document.querySelectorAll("#results li .title-text")];
    expect(items.map((el) => el.textContent)).toEqual(
      THREE_TITLES.titles.map((t) => t.text),
    );
    expect(calls).toHaveLength(1);
    expect(calls[0].url).toBe("http://svc.test/api/generate");
    const body = JSON.parse(String(calls[0].init?.body));
    expect(body).toEqual({
      language: "java",
      description: "how do i sort a list of maps",
      code: "list.sort(cmp)",
      beam_width: 5,
      num_titles: 3,
    });
  });

  it("rendered titles match the response byte for byte", async () => {
    const { fetchFn } = stubFetch(() => jsonResponse(THREE_TITLES));
    const app = mount(fetchFn);
    setInputs(app, "desc", "");
    await app.submitGenerate();
    const third = document.querySelectorAll("#results li .title-text")[2];
    expect(third.textContent).toBe("how to sort <code> & keep keys");
  });

  it("disables generate while both inputs are empty and sends nothing", async () => {
    const { fetchFn, calls } = stubFetch(() => jsonResponse(THREE_TITLES));
    const app = mount(fetchFn);
    expect(app.elements.generate.disabled).toBe(true);
    app.elements.generate.click();
    await Promise.resolve();
    expect(calls).toHaveLength(0);

    setInputs(app, "   ", "\n\t ");
    expect(app.elements.generate.disabled).toBe(true);
  });

  it("shows an inline error on server failure and keeps inputs and results", async () => {
    let fail = false;
    const { fetchFn } = stubFetch(() => {
      if (fail) throw new TypeError("fetch failed");
      return jsonResponse(THREE_TITLES);
    });
    const app = mount(fetchFn);
    setInputs(app, "my description", "my code");
    await app.submitGenerate();
    expect(document.querySelectorAll("#results li")).toHaveLength(3);

    fail = true;
    await app.submitGenerate();

    const error = document.getElementById("error") as HTMLParagraphElement;
    expect(error.hidden).toBe(false);
    expect(error.textContent).toContain("unreachable");
    expect(app.elements.description.value).toBe("my description");
    expect(app.elements.code.value).toBe("my code");
    expect(document.querySelectorAll("#results li")).toHaveLength(3);
  });

  it("surfaces field-level validation errors", async () => {
    const { fetchFn } = stubFetch(() =>
      jsonResponse({ error: "empty input", field: "description" }, 400),
    );
    const app = mount(fetchFn);
    setInputs(app, "x", "");
    await app.submitGenerate();
    const error = document.getElementById("error") as HTMLParagraphElement;
    expect(error.textContent).toBe("description: empty input");
  });

  it("ignores a second click while a request is in flight", async () => {
    let release!: (r: Response) => void;
    const gate = new Promise<Response>((resolve) => (release = resolve));
    const { fetchFn, calls } = stubFetch(() => gate);
    const app = mount(fetchFn);
    setInputs(app, "desc", "code");

    const first = app.submitGenerate();
    expect(app.elements.generate.disabled).toBe(true);
    const second = app.submitGenerate(); // in flight: must be a no-op
    release(jsonResponse(THREE_TITLES));
    await Promise.all([first, second]);

    expect(calls).toHaveLength(1);
    expect(document.querySelectorAll("#results li")).toHaveLength(3);
  });

  it("sends the selected language", async () => {
    const { fetchFn, calls } = stubFetch(() => jsonResponse(THREE_TITLES));
    const app = mount(fetchFn);
    app.elements.language.value = "python";
    app.elements.language.dispatchEvent(new Event("change"));
    setInputs(app, "pandas groupby question", "");
    await app.submitGenerate();
    expect(JSON.parse(String(calls[0].init?.body)).language).toBe("python");
  });
});

describe("copy", () => {
  it("copies the selected title text exactly", async () => {
    const copied: string[] = [];
    const { fetchFn } = stubFetch(() => jsonResponse(THREE_TITLES));
    const app = mount(fetchFn, {
      clipboard: async (text: string) => void copied.push(text),
    });
    setInputs(app, "desc", "code");
    await app.submitGenerate();

    const buttons = document.querySelectorAll<HTMLButtonElement>("#results .copy");
    buttons[0].click();
    await Promise.resolve();
    expect(copied).toEqual(["sort a list of maps by value"]);

    buttons[2].click();
    await Promise.resolve();
    expect(copied[1]).toBe("how to sort <code> & keep keys");
  });

  it("copy after clearing results shows a notice and touches nothing", async () => {
    const copied: string[] = [];
    const { fetchFn } = stubFetch(() => jsonResponse(THREE_TITLES));
    const app = mount(fetchFn, {
      clipboard: async (text: string) => void copied.push(text),
    });
    setInputs(app, "desc", "code");
    await app.submitGenerate();
    app.clearResults();

    await app.copyTitle(0);
    const noticeEl = document.getElementById("notice") as HTMLParagraphElement;
    expect(noticeEl.hidden).toBe(false);
    expect(noticeEl.textContent).toBe("nothing to copy");
    expect(copied).toHaveLength(0);
  });
});
