import type { LanguageId, ScoredTitle } from "./api";

export interface UiState {
  language: LanguageId;
  description: string;
  code: string;
  inFlight: boolean;
  results: ScoredTitle[];
  error: string | null;
}

export const LANGUAGES: { id: LanguageId; label: string }[] = [
  { id: "java", label: "Java" },
  { id: "csharp", label: "C#" },
  { id: "python", label: "Python" },
  { id: "javascript", label: "JavaScript" },
];

export function initialState(): UiState {
  return {
    language: "java",
    description: "",
    code: "",
    inFlight: false,
    results: [],
    error: null,
  };
}

export function hasInput(state: UiState): boolean {
  return state.description.trim().length > 0 || state.code.trim().length > 0;
}

export function canSubmit(state: UiState): boolean {
  return !state.inFlight && hasInput(state);
}
