"""HTTP inference service backing the web UI.

Two endpoints: ``POST /api/generate`` turns a language + description +
code payload into ranked title suggestions, and ``GET /api/health``
reports readiness. The server starts listening immediately and loads the
checkpoint in the background, so health can answer ready=false during
warm-up. The loaded model is shared read-only; a bounded semaphore caps
concurrent decodes.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .corpus import Language
from .decoding import BeamConfig, beam_search
from .errors import TitleForgeError
from .model import load_checkpoint
from .tokenizer import SubwordVocabulary

log = logging.getLogger("titleforge.service")

MAX_INPUT_BYTES = 64 * 1024  # description + code, jointly
DEFAULT_NUM_TITLES = 3

LANGUAGE_VALUES = {l.value for l in Language}


@dataclass
class GenerateRequest:
    language: str
    description: str
    code: str
    beam_width: int
    num_titles: int


@dataclass
class LoadedModel:
    model: object
    vocab: SubwordVocabulary
    model_id: str


class RequestValidationError(TitleForgeError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


def parse_generate_request(payload, beam_default) -> GenerateRequest:
    if not isinstance(payload, dict):
        raise RequestValidationError("body", "expected a JSON object")
    language = payload.get("language")
    if language not in LANGUAGE_VALUES:
        raise RequestValidationError(
            "language", f"must be one of {sorted(LANGUAGE_VALUES)}"
        )
    description = payload.get("description", "")
    code = payload.get("code", "")
    if not isinstance(description, str) or not isinstance(code, str):
        raise RequestValidationError("description", "description and code must be strings")
    if not description.strip() and not code.strip():
        raise RequestValidationError("description", "empty input")
    if len(description.encode("utf-8")) + len(code.encode("utf-8")) > MAX_INPUT_BYTES:
        raise RequestValidationError(
            "description", f"description + code exceed {MAX_INPUT_BYTES} bytes"
        )
    beam_width = payload.get("beam_width", beam_default)
    default_titles = min(DEFAULT_NUM_TITLES, beam_width) if isinstance(beam_width, int) else DEFAULT_NUM_TITLES
    num_titles = payload.get("num_titles", default_titles)
    if not isinstance(beam_width, int) or beam_width < 1:
        raise RequestValidationError("beam_width", "must be an integer >= 1")
    if not isinstance(num_titles, int) or num_titles < 1:
        raise RequestValidationError("num_titles", "must be an integer >= 1")
    if num_titles > beam_width:
        raise RequestValidationError("num_titles", "cannot exceed beam_width")
    return GenerateRequest(language, description, code, beam_width, num_titles)


class InferenceService:
    def __init__(self, checkpoint_path=None, vocab_path=None, beam_default=5,
                 max_workers=None, loader=None):
        self.checkpoint_path = checkpoint_path
        self.vocab_path = vocab_path
        self.beam_default = beam_default
        self.loaded: LoadedModel | None = None
        self.ready = threading.Event()
        self.started_at = time.monotonic()
        self._loader = loader or self._load_from_disk
        self._decode_slots = threading.BoundedSemaphore(max_workers or os.cpu_count() or 2)
        self._httpd: ThreadingHTTPServer | None = None
        self._threads: list[threading.Thread] = []

    def _load_from_disk(self) -> LoadedModel:
        model, model_id = load_checkpoint(self.checkpoint_path)
        vocab = SubwordVocabulary.load(self.vocab_path)
        return LoadedModel(model=model, vocab=vocab, model_id=model_id)

    def _warm_up(self):
        try:
            self.loaded = self._loader()
            self.ready.set()
            log.info("model %s ready", self.loaded.model_id)
        except Exception:
            log.exception("model load failed; service stays unready")

    def start(self, host="127.0.0.1", port=0):
        """Bind and serve in background threads; returns (host, port)."""
        handler = _make_handler(self)
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self.started_at = time.monotonic()
        loader = threading.Thread(target=self._warm_up, name="titleforge-warmup", daemon=True)
        server = threading.Thread(
            target=self._httpd.serve_forever, name="titleforge-http", daemon=True
        )
        loader.start()
        server.start()
        self._threads = [loader, server]
        return self._httpd.server_address

    def serve_forever(self, host, port):
        """Blocking variant for the CLI."""
        bound = self.start(host, port)
        log.info("listening on %s:%s", *bound)
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def stop(self):
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None

    # --- request handling -----------------------------------------------

    def health(self) -> dict:
        return {
            "model_id": self.loaded.model_id if self.loaded else None,
            "uptime_seconds": round(time.monotonic() - self.started_at, 3),
            "ready": self.ready.is_set(),
        }

    def generate(self, request: GenerateRequest) -> dict:
        loaded = self.loaded
        model, vocab = loaded.model, loaded.vocab
        started = time.perf_counter()
        model_input = vocab.build_model_input(
            request.language, request.description, request.code,
            model.config.max_encoder_len,
        )
        beam = BeamConfig(beam_width=request.beam_width,
                          max_len=model.config.max_decoder_len)
        with self._decode_slots:
            hypotheses = beam_search(model, model_input, beam)
        titles = [
            {"text": vocab.decode(h.token_ids), "normalized_score": h.normalized_score()}
            for h in hypotheses[: request.num_titles]
        ]
        return {
            "titles": titles,
            "model_id": loaded.model_id,
            "elapsed_ms": round(1000.0 * (time.perf_counter() - started), 3),
        }


def _make_handler(service: InferenceService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("%s %s", self.address_string(), fmt % args)

        def _send_json(self, status, payload):
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            if self.path == "/api/health":
                self._send_json(200, service.health())
            else:
                self._send_json(404, {"error": f"no such endpoint: {self.path}"})

        def do_POST(self):
            if self.path != "/api/generate":
                self._send_json(404, {"error": f"no such endpoint: {self.path}"})
                return
            if not service.ready.is_set():
                self._send_json(503, {"error": "model is still loading"})
                return
            length = int(self.headers.get("Content-Length", 0))
            if length > MAX_INPUT_BYTES + 4096:
                self._send_json(413, {"error": "request body too large"})
                self.close_connection = True
                return
            raw = self.rfile.read(length)
            try:
                payload = json.loads(raw.decode("utf-8"))
            except (ValueError, UnicodeDecodeError):
                self._send_json(400, {"error": "body is not valid JSON"})
                return
            try:
                request = parse_generate_request(payload, service.beam_default)
            except RequestValidationError as exc:
                self._send_json(400, {"error": exc.message, "field": exc.field})
                return
            try:
                self._send_json(200, service.generate(request))
            except TitleForgeError as exc:
                self._send_json(400, {"error": str(exc)})
            except Exception:
                log.exception("generation failed")
                self._send_json(500, {"error": "internal error"})

    return Handler
