"""Client for the laboratory service.

By default the service application is mounted in-process (no socket, no
subprocess), so the CLI works standalone; pass a server URL to talk to a
remote instance of the same app over HTTP.
"""

from __future__ import annotations

from typing import Optional

import httpx

from .errors import LabError


class RemoteError(LabError):
    """A service call failed; carries the service's error type and message."""


def _raise_for(response: httpx.Response) -> None:
    if response.status_code < 400:
        return
    try:
        body = response.json()
    except ValueError:
        raise RemoteError(f"HTTP {response.status_code}: {response.text[:500]}")
    if isinstance(body, dict) and "error" in body:
        err = body["error"]
        raise RemoteError(f"{err.get('type', 'LabError')}: {err.get('message', '')}")
    # FastAPI validation errors arrive as {"detail": [...]}
    raise RemoteError(f"HTTP {response.status_code}: {body}")


class LabClient:
    """Thin typed wrapper over the HTTP routes."""

    def __init__(self, server: Optional[str] = None):
        if server is None:
            import warnings

            with warnings.catch_warnings():
                # the in-process transport warns about its preferred http
                # backend; callers of the CLI should not see that on stderr
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import create_app

            self._http: httpx.Client = TestClient(create_app(), base_url="http://lab")
        else:
            self._http = httpx.Client(base_url=server, timeout=600.0)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "LabClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _get(self, path: str) -> dict:
        resp = self._http.get(path)
        _raise_for(resp)
        return resp.json()

    def _post(self, path: str, payload: dict) -> dict:
        resp = self._http.post(path, json=payload)
        _raise_for(resp)
        return resp.json()

    def health(self) -> dict:
        return self._get("/health")

    def env_sample(self, payload: dict) -> dict:
        return self._post("/env/sample", payload)

    def env_validate(self, env: dict) -> dict:
        return self._post("/env/validate", {"env": env})

    def trees_enum(self, k: int, numberings: bool = False) -> dict:
        return self._post("/trees/enum", {"k": k, "numberings": numberings})

    def chi_solve(self, payload: dict) -> dict:
        return self._post("/chi/solve", payload)

    def chi_table(self, payload: dict) -> dict:
        return self._post("/chi/table", payload)

    def simulate_direct(self, payload: dict) -> dict:
        return self._post("/simulate/direct", payload)

    def simulate_fk(self, payload: dict) -> dict:
        return self._post("/simulate/fk", payload)

    def pde_solve(self, payload: dict) -> dict:
        return self._post("/pde/solve", payload)

    def run_experiment(self, config: dict) -> dict:
        return self._post("/experiment/run", config)
