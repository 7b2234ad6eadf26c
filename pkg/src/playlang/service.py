"""Live instruction-following sessions over a WebSocket.

Each /session connection owns a private environment plus agent state,
driven by a single asyncio task; nothing is shared between sessions except
the read-only parameter snapshot loaded at startup. Frames stream through
a small bounded buffer that drops the oldest entry when the client cannot
keep up, so a slow reader never stalls the environment loop.

Frame payloads are raw RGB bytes (row-major, 96x96x3) in base64; the
console reconstructs them on a canvas without a codec.
"""

from __future__ import annotations

import asyncio
import base64
import itertools
import json

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .config import Config
from .env import TASKS, Action, PlaygroundEnv, render
from .language import SynonymLexicon, infer_label
from .oracle import ScriptRunner


class ServiceError(RuntimeError):
    pass


_session_ids = itertools.count(1)

RATE_BOUNDS = (1.0, 60.0)
FRAME_BUFFER = 4


class PolicyAgent:
    """Checkpoint-backed agent. The parameter snapshot is shared across
    sessions; all mutable state (plan, recurrent state, rng) lives in the
    per-session policy instance."""

    def __init__(self, model, lexicon: SynonymLexicon, seed: int):
        from .experiments import make_policy

        self.policy = make_policy(model, lexicon, seed=seed)

    def instruct(self, text: str) -> None:
        self.policy.set_instruction(text)

    def action(self, obs, state) -> Action:
        return self.policy.act(obs)

    def reset(self) -> None:
        self.policy.reset()


class OracleAgent:
    """Scripted stand-in so the console works without a checkpoint. Only
    instructions that map to a known task can be followed."""

    def __init__(self, lexicon: SynonymLexicon, seed: int):
        self.lexicon = lexicon
        self.seed = seed
        self.runner = ScriptRunner(seed)

    def instruct(self, text: str) -> None:
        task = infer_label(text, self.lexicon)
        if task is None or task not in TASKS:
            raise ServiceError(f"cannot map instruction to a scripted task: {text!r}")
        self.runner.set_task(task)

    def action(self, obs, state) -> Action:
        return self.runner.act(state)

    def reset(self) -> None:
        self.runner = ScriptRunner(self.seed)


class Session:
    """One live session: environment, agent, instruction bookkeeping."""

    def __init__(self, agent, frame_hz: float, seed: int):
        self.agent = agent
        self.hz = float(frame_hz)
        self.seed = seed
        self.env = PlaygroundEnv()
        self.obs = self.env.reset(seed=seed)
        self.instruction: str | None = None
        self.expected_task: str | None = None
        self.paused = False
        self.conditioned = False

    # ---- control messages --------------------------------------------------

    def handle(self, msg: dict) -> None:
        """Apply one client message. Raises ServiceError on anything
        malformed; the caller turns that into an error frame."""
        if not isinstance(msg, dict) or "type" not in msg:
            raise ServiceError("message must be an object with a 'type' field")
        kind = msg["type"]
        if kind == "instruct":
            text = msg.get("text")
            if not isinstance(text, str) or not text.strip():
                raise ServiceError("instruct needs a non-empty 'text' string")
            self.agent.instruct(text)
            self.instruction = text
            self.expected_task = infer_label(text, _shared_lexicon())
            self.conditioned = True
        elif kind == "reset":
            mode = msg.get("mode", "neutral")
            if mode != "neutral":
                raise ServiceError(f"unsupported reset mode: {mode!r}")
            self.seed += 1
            self.obs = self.env.reset(seed=self.seed)
            self.agent.reset()
            self.instruction = None
            self.expected_task = None
            self.conditioned = False
        elif kind == "pause":
            self.paused = not self.paused
        elif kind == "step_rate":
            hz = msg.get("hz")
            if not isinstance(hz, (int, float)) or not (RATE_BOUNDS[0] <= hz <= RATE_BOUNDS[1]):
                raise ServiceError(f"step_rate hz must be a number in {RATE_BOUNDS}")
            self.hz = float(hz)
        else:
            raise ServiceError(f"unknown message type: {kind!r}")

    # ---- stepping ----------------------------------------------------------

    def tick(self) -> dict:
        """Advance one environment step and build the frame message."""
        if self.conditioned:
            act = self.agent.action(self.obs, self.env.state)
        else:
            act = Action(0.0, 0.0, 0.0)
        self.obs, events = self.env.step(act)
        state = self.env.state
        fired = [e.task for e in events]
        success = self.expected_task is not None and self.expected_task in fired
        frame = render(state)
        return {
            "type": "frame",
            "tick": state.tick,
            "frame": base64.b64encode(frame.tobytes()).decode("ascii"),
            "state": state.to_dict(),
            "events": fired,
            "active_instruction": self.instruction,
            "subtask_success": success,
        }


_lexicon_cache: SynonymLexicon | None = None


def _shared_lexicon() -> SynonymLexicon:
    global _lexicon_cache
    if _lexicon_cache is None:
        _lexicon_cache = SynonymLexicon.load()
    return _lexicon_cache


async def _run_session(ws: WebSocket, session: Session) -> None:
    """Drive one connection: a receiver feeding a control queue, a sender
    draining the frame buffer, and the tick loop in between. The frame
    buffer drops its oldest entry instead of blocking the tick loop."""
    inbound: asyncio.Queue = asyncio.Queue()
    outbound: asyncio.Queue = asyncio.Queue(maxsize=FRAME_BUFFER)
    closed = asyncio.Event()

    async def receiver():
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError as e:
                    msg = ServiceError(f"not valid JSON: {e}")
                await inbound.put(msg)
        except WebSocketDisconnect:
            closed.set()

    async def sender():
        try:
            while True:
                frame = await outbound.get()
                await ws.send_json(frame)
        except (WebSocketDisconnect, RuntimeError):
            closed.set()

    recv_task = asyncio.create_task(receiver())
    send_task = asyncio.create_task(sender())

    async def send_now(payload: dict) -> None:
        # errors bypass the droppable frame buffer; losing one would hide
        # the reason a control message was ignored
        try:
            await ws.send_json(payload)
        except (WebSocketDisconnect, RuntimeError):
            closed.set()

    try:
        loop = asyncio.get_running_loop()
        next_tick = loop.time()
        while not closed.is_set():
            while not inbound.empty():
                msg = inbound.get_nowait()
                if isinstance(msg, ServiceError):
                    await send_now({"type": "error", "detail": str(msg)})
                    continue
                try:
                    session.handle(msg)
                except ServiceError as e:
                    await send_now({"type": "error", "detail": str(e)})
            if not session.paused:
                frame = session.tick()
                if outbound.full():
                    outbound.get_nowait()
                outbound.put_nowait(frame)
            next_tick += 1.0 / session.hz
            await asyncio.sleep(max(0.0, next_tick - loop.time()))
    finally:
        recv_task.cancel()
        send_task.cancel()


def build_app(make_agent, model_info: dict, frame_hz: float = 20.0) -> FastAPI:
    """App factory shared by the CLI entry point and the tests. make_agent
    is called once per connection so sessions stay isolated."""
    app = FastAPI()

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/model")
    def model():
        return model_info

    @app.websocket("/session")
    async def session_endpoint(ws: WebSocket):
        await ws.accept()
        sid = next(_session_ids)
        session = Session(make_agent(sid), frame_hz, seed=sid * 1000)
        await _run_session(ws, session)

    return app


def checkpoint_app(path, frame_hz: float = 20.0) -> FastAPI:
    from dataclasses import asdict

    from .experiments import load_policy_checkpoint

    model = load_policy_checkpoint(path)
    lexicon = _shared_lexicon()
    info = {
        "kind": "policy",
        "model_spec": asdict(model.spec),
        "language": model.language,
        "meta": model.meta,
    }

    def make_agent(sid: int) -> PolicyAgent:
        return PolicyAgent(model, lexicon, seed=sid)

    return build_app(make_agent, info, frame_hz)


def oracle_app(frame_hz: float = 20.0) -> FastAPI:
    lexicon = _shared_lexicon()
    info = {"kind": "oracle", "tasks": list(TASKS)}

    def make_agent(sid: int) -> OracleAgent:
        return OracleAgent(lexicon, seed=sid)

    return build_app(make_agent, info, frame_hz)


def run_service(cfg: Config, checkpoint=None, oracle: bool = False) -> None:
    import uvicorn

    if oracle:
        app = oracle_app(frame_hz=cfg.serve.frame_hz)
    elif checkpoint:
        app = checkpoint_app(checkpoint, frame_hz=cfg.serve.frame_hz)
    else:
        raise ServiceError("serve needs a checkpoint path or oracle mode")
    uvicorn.run(app, host=cfg.serve.host, port=cfg.serve.port, log_level="warning")
