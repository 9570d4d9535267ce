"""OpenAI-compatible fake chat-completion endpoint for offline runs of the HTTP path."""

import logging
from threading import Lock
from typing import List, Optional

import shortuuid
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)


class ChatMessage(BaseModel):
    role: str
    content: str


class ChatCompletionRequest(BaseModel):
    model: str = ""
    messages: List[ChatMessage] = Field(min_length=1)
    temperature: Optional[float] = None
    top_p: Optional[float] = None
    top_k: Optional[int] = None


def create_app(
    replies: Optional[List[str]] = None,
    default_reply: Optional[str] = None,
    fail_first: int = 0,
) -> FastAPI:
    """Build a mock provider app.

    Replies are served from the list in order, then default_reply forever.
    The first fail_first requests are answered with 503.
    """
    app = FastAPI()
    app.state.replies = list(replies or [])
    app.state.default_reply = default_reply
    app.state.fail_first = fail_first
    app.state.requests = []
    lock = Lock()

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/v1/chat/completions")
    def chat_completions(request: ChatCompletionRequest):
        with lock:
            app.state.requests.append(request)
            served = len(app.state.requests)
            if served <= app.state.fail_first:
                logger.info(f"Mock provider failing request {served} on purpose")
                raise HTTPException(status_code=503, detail="Mock provider unavailable")
            if app.state.replies:
                reply = app.state.replies.pop(0)
            elif app.state.default_reply is not None:
                reply = app.state.default_reply
            else:
                raise HTTPException(
                    status_code=503, detail="Mock provider has no replies left"
                )

        return {
            "id": f"chatcmpl-{shortuuid.uuid()}",
            "object": "chat.completion",
            "model": request.model,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": reply},
                    "finish_reason": "stop",
                }
            ],
        }

    return app
