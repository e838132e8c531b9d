"""HTTP service for a SafeStore and the matching client."""
from __future__ import annotations

import base64
from typing import Optional

import httpx
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from ..certset import Certificate, Token, encode
from .core import (DeleteRejected, DeleteRequest, NotFoundError, PostRejected,
                   SafeStore, StoreError, decode_key_header, encode_key_header)

__all__ = ["create_store_app", "RemoteStore", "CERT_MEDIA_TYPE"]

CERT_MEDIA_TYPE = "application/x-safe-cert"

_POST_STATUS = {"too-large": 413, "foreign-overwrite": 403, "stale-reissue": 409}
_DELETE_STATUS = {"unauthorized": 401, "stale-request": 409}


def _error(status: int, code: str, detail: str) -> JSONResponse:
    return JSONResponse({"code": code, "detail": detail}, status_code=status)


def _token(text: str) -> Optional[Token]:
    try:
        return Token.from_text(text)
    except ValueError:
        return None


def create_store_app(store: SafeStore) -> FastAPI:
    app = FastAPI(title="safestore")

    @app.get("/health")
    def health():
        return {"status": "ok", "sets": len(store)}

    @app.put("/sets/{token}")
    async def put_set(token: str, request: Request):
        tok = _token(token)
        if tok is None:
            return _error(400, "bad-token", "malformed token")
        body = await request.body()
        try:
            stored = store.post(body, tok)
        except PostRejected as exc:
            return _error(_POST_STATUS.get(exc.code, 400), exc.code, str(exc))
        return JSONResponse({"token": stored.text}, status_code=201)

    @app.get("/sets/{token}")
    def get_set(token: str):
        tok = _token(token)
        if tok is None:
            return _error(400, "bad-token", "malformed token")
        try:
            raw = store.fetch(tok)
        except NotFoundError as exc:
            return _error(404, "not-found", str(exc))
        return Response(raw, media_type=CERT_MEDIA_TYPE)

    @app.delete("/sets/{token}")
    def delete_set(token: str, request: Request):
        tok = _token(token)
        if tok is None:
            return _error(400, "bad-token", "malformed token")
        h = request.headers
        try:
            req = DeleteRequest(tok, int(h["x-safe-timestamp"]) / 1000,
                                decode_key_header(h["x-safe-key"]),
                                base64.urlsafe_b64decode(h["x-safe-signature"] + "=="))
        except (KeyError, ValueError):
            return _error(401, "unauthorized", "missing or malformed signed headers")
        try:
            store.delete(tok, req)
        except NotFoundError as exc:
            return _error(404, "not-found", str(exc))
        except DeleteRejected as exc:
            return _error(_DELETE_STATUS.get(exc.code, 401), exc.code, str(exc))
        return {"deleted": tok.text}

    return app


class RemoteStore:
    """Client with the same post/fetch/delete surface as :class:`SafeStore`.

    ``client`` may be any ``httpx.Client`` (tests pass an in-process one)."""

    def __init__(self, base_url: str = "", client: Optional[httpx.Client] = None,
                 timeout: float = 10.0):
        self.client = client or httpx.Client(base_url=base_url, timeout=timeout)
        self.stats = {"posts": 0, "fetches": 0}

    def post(self, cert, token: Optional[Token] = None) -> Token:
        raw = encode(cert) if isinstance(cert, Certificate) else bytes(cert)
        if token is None:
            from ..certset import decode
            token = decode(raw).token
        r = self.client.put(f"/sets/{token.text}", content=raw,
                            headers={"content-type": CERT_MEDIA_TYPE})
        self.stats["posts"] += 1
        if r.status_code != 201:
            body = _json(r)
            raise PostRejected(body.get("detail", r.text), body.get("code", "rejected"))
        return Token.from_text(r.json()["token"])

    def fetch(self, token: Token) -> bytes:
        self.stats["fetches"] += 1
        r = self.client.get(f"/sets/{token.text}")
        if r.status_code == 404:
            raise NotFoundError(f"no set stored under {token.text}")
        if r.status_code != 200:
            raise StoreError(f"fetch failed with HTTP {r.status_code}", "remote-error")
        return r.content

    def delete(self, token: Token, request: DeleteRequest) -> None:
        r = self.client.delete(f"/sets/{token.text}", headers={
            "x-safe-timestamp": str(int(round(request.timestamp * 1000))),
            "x-safe-key": encode_key_header(request.public_key),
            "x-safe-signature": base64.urlsafe_b64encode(request.signature).decode()})
        if r.status_code == 404:
            raise NotFoundError(f"no set stored under {token.text}")
        if r.status_code != 200:
            body = _json(r)
            raise DeleteRejected(body.get("detail", r.text), body.get("code", "unauthorized"))

    def health(self) -> dict:
        return self.client.get("/health").json()

    def close(self):
        self.client.close()


def _json(r) -> dict:
    try:
        body = r.json()
        return body if isinstance(body, dict) else {}
    except ValueError:
        return {}
