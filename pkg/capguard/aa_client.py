"""
AA Client

HTTP client for the AA and puzzle beacon services. Maps error responses
back to the exceptions the services raised.
"""

import logging
from typing import Any, Dict, List, Optional, Tuple

import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from .blind_signature import AAPublicKeys
from .epoch_beacon import Epoch
from .exceptions import (
    RateLimitedError,
    SeedRejectedError,
    ServiceError,
    TransRejectedError,
)
from .puzzles import DAKeySet, PuzzleSeed
from .tokens import Capability, PreCapability, Pseudonym, TokenKind, pack_issuance_header

logger = logging.getLogger(__name__)

CAPABILITY_HEADER = "X-Capability"
_SEED_STATUSES = (401, 403, 409)


def build_session() -> requests.Session:
    """
    Session retrying transient server failures

    429 is left to the caller so Retry-After reaches the rate limit handler.
    """
    session = requests.Session()
    retry_strategy = Retry(
        total=3,
        backoff_factor=1,
        status_forcelist=[500, 502, 503, 504],
    )
    adapter = HTTPAdapter(max_retries=retry_strategy)
    session.mount("http://", adapter)
    session.mount("https://", adapter)
    return session


class AAClient:
    """Talks to one AA"""

    def __init__(
        self,
        base_url: str,
        session: Optional[requests.Session] = None,
        timeout: float = 10.0,
    ) -> None:
        """
        Initialize AA client

        Args:
            base_url: AA base URL
            session: HTTP session (a retrying session by default)
            timeout: Per-request timeout in seconds
        """
        self.base_url = base_url.rstrip("/")
        self.session = session or build_session()
        self.timeout = timeout

    def _request(self, method: str, path: str, **kwargs: Any) -> requests.Response:
        url = f"{self.base_url}{path}"
        try:
            return self.session.request(method, url, timeout=self.timeout, **kwargs)
        except requests.exceptions.RequestException as e:
            raise ServiceError(f"{method} {url} failed: {e}") from e

    @staticmethod
    def _json(response: requests.Response) -> Dict[str, Any]:
        try:
            return dict(response.json())
        except ValueError:
            return {}

    def _raise_for_error(self, response: requests.Response, bucket: Optional[str] = None) -> None:
        if response.status_code < 400:
            return
        body = self._json(response)
        code = str(body.get("error", "error"))
        if response.status_code == 429:
            retry_after = body.get("retry_after") or response.headers.get("Retry-After")
            raise RateLimitedError(
                f"AA rate limit reached ({body.get('bucket', bucket)})",
                retry_after=float(retry_after) if retry_after is not None else None,
                bucket=body.get("bucket", bucket),
            )
        raise ServiceError(
            f"AA returned {response.status_code}: {code}",
            status_code=response.status_code,
            response_data=response.text,
        )

    # Directory

    def get_keys(self) -> Tuple[List[Tuple[AAPublicKeys, Optional[str]]], Dict[str, float]]:
        """
        Fetch published AA keys and issuance limits

        Returns:
            ([(public keys, seed type)], limits)
        """
        response = self._request("GET", "/keys")
        self._raise_for_error(response)
        body = self._json(response)
        entries = [
            (AAPublicKeys.from_dict(entry), entry.get("seed_type")) for entry in body.get("aas", [])
        ]
        return entries, dict(body.get("limits", {}))

    def get_epoch(self) -> Epoch:
        response = self._request("GET", "/epoch")
        self._raise_for_error(response)
        return Epoch.from_dict(self._json(response))

    # Issuance

    def submit_seed(self, material: str, seed_type: str) -> Pseudonym:
        """
        Exchange seed material for a pseudonym

        Raises:
            SeedRejectedError: The AA refused the seed
        """
        response = self._request(
            "POST", "/seed", json={"seed_type": seed_type, "material": material}
        )
        if response.status_code in _SEED_STATUSES:
            body = self._json(response)
            raise SeedRejectedError(
                f"Seed rejected: {body.get('error')}",
                reason=body.get("error"),
                rule=body.get("rule"),
            )
        self._raise_for_error(response)
        return Pseudonym.from_text(str(self._json(response)["pseudonym"]))

    def request_precapability(
        self,
        kind: TokenKind,
        auth_tag: int,
        credential: bytes,
        blinded_message: int,
        seed_type: Optional[str] = None,
    ) -> Tuple[PreCapability, Optional[Pseudonym]]:
        """
        POST /precap

        Returns:
            (pre-capability, pseudonym issued alongside when seed material was sent)

        Raises:
            RateLimitedError: Bucket empty
            SeedRejectedError: Pseudonym or seed refused
            TransRejectedError: Redemption credit used up
        """
        params = {"kind": kind.value}
        if seed_type:
            params["seed_type"] = seed_type
        header = pack_issuance_header(auth_tag, credential, blinded_message)
        response = self._request(
            "POST", "/precap", params=params, headers={CAPABILITY_HEADER: header}
        )
        body = self._json(response)
        if response.status_code == 409 and body.get("error") == "spent":
            raise TransRejectedError("Redemption credit used up", "spent")
        if response.status_code in _SEED_STATUSES:
            raise SeedRejectedError(
                f"Issuance refused: {body.get('error')}",
                reason=body.get("error"),
                rule=body.get("rule"),
            )
        bucket = "relay" if kind == TokenKind.RELAY else "site"
        self._raise_for_error(response, bucket)
        pseudonym = Pseudonym.from_text(body["pseudonym"]) if body.get("pseudonym") else None
        return PreCapability.from_dict(body["pre_capability"]), pseudonym

    def redeem_trans(self, trans_cap: Capability) -> Tuple[str, int]:
        """
        Redeem a trans-capability

        Returns:
            (credit id, remaining relay issuances)

        Raises:
            TransRejectedError: reason is wrong_scope, unauthentic, expired or spent
        """
        response = self._request(
            "POST", "/trans-redeem", json={"capability": trans_cap.to_header()}
        )
        body = self._json(response)
        if response.status_code in (400, 403, 409):
            reason = str(body.get("error"))
            raise TransRejectedError(f"Trans-capability rejected: {reason}", reason)
        self._raise_for_error(response)
        return str(body["credit_id"]), int(body["remaining"])


class BeaconClient:
    """Fetches puzzle seeds from the puzzle beacon"""

    def __init__(
        self,
        base_url: str,
        session: Optional[requests.Session] = None,
        timeout: float = 10.0,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.session = session or build_session()
        self.timeout = timeout
        self._da_keys: Optional[DAKeySet] = None

    def _get(self, path: str, **params: Any) -> Dict[str, Any]:
        url = f"{self.base_url}{path}"
        try:
            response = self.session.get(url, params=params or None, timeout=self.timeout)
        except requests.exceptions.RequestException as e:
            raise ServiceError(f"GET {url} failed: {e}") from e
        if response.status_code >= 400:
            raise ServiceError(
                f"Beacon returned {response.status_code}",
                status_code=response.status_code,
                response_data=response.text,
            )
        return dict(response.json())

    def da_keys(self) -> DAKeySet:
        if self._da_keys is None:
            body = self._get("/da-keys")
            self._da_keys = DAKeySet.from_public_pems(
                {int(i): pem for i, pem in body["keys"].items()}
            )
        return self._da_keys

    def puzzle_seed(
        self, period_index: Optional[int] = None, quorum: Optional[int] = None
    ) -> PuzzleSeed:
        """
        Fetch and verify a seed

        Args:
            period_index: Release period (current one by default)
            quorum: Required number of authentic pieces (the beacon's own
                figure when omitted)

        Raises:
            PuzzleError: Fewer than quorum authentic pieces
        """
        params = {} if period_index is None else {"period": period_index}
        body = self._get("/puzzle-seed", **params)
        required = quorum if quorum is not None else int(body.get("quorum", 1))
        return PuzzleSeed.from_dict(body, self.da_keys(), required)
