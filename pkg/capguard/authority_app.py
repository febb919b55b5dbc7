"""
AA HTTP Service

Flask front end of an AccessAuthority. Issuance requests carry their
credential and blinded message in the X-Capability header; see
tokens.pack_issuance_header for the layout.
"""

import logging
import math
from typing import Any, Dict, Iterable, Tuple

from flask import Flask, jsonify, request

from .authority import AccessAuthority, SeedRecord
from .exceptions import (
    RateLimitedError,
    SeedRejectedError,
    TokenEncodingError,
    TransRejectedError,
)
from .tokens import (
    AUTH_CREDIT,
    AUTH_PSEUDONYM,
    AUTH_SEED,
    Capability,
    Pseudonym,
    TokenKind,
    unpack_issuance_header,
)

logger = logging.getLogger(__name__)

CAPABILITY_HEADER = "X-Capability"

# HTTP status per seed/pseudonym rejection reason
_SEED_STATUS = {
    "invalid_pseudonym": 401,
    "expired_pseudonym": 401,
    "unknown_pseudonym": 401,
    "unknown_seed": 401,
    "wrong_seed_type": 403,
    "invalid_solution": 403,
    "stub_spent": 409,
}

_TRANS_STATUS = {
    "wrong_scope": 400,
    "unauthentic": 403,
    "expired": 403,
    "spent": 409,
}


def _error(code: str, status: int, **extra: Any) -> Tuple[Any, int]:
    body: Dict[str, Any] = {"error": code}
    body.update({k: v for k, v in extra.items() if v is not None})
    return jsonify(body), status


def create_app(
    authority: AccessAuthority,
    peers: Iterable[Dict[str, Any]] = (),
) -> Flask:
    """
    Build the AA application

    Args:
        authority: The access authority served by this app
        peers: Public key entries (with seed_type) of other AAs to republish
            under /keys

    Returns:
        Flask application
    """
    app = Flask(__name__)
    app.config["AUTHORITY"] = authority
    peer_entries = list(peers)

    @app.after_request
    def allow_capability_header(response):  # type: ignore[no-untyped-def]
        response.headers["Access-Control-Allow-Origin"] = "*"
        response.headers["Access-Control-Allow-Headers"] = CAPABILITY_HEADER
        response.headers["Access-Control-Expose-Headers"] = "Retry-After"
        return response

    @app.errorhandler(SeedRejectedError)
    def seed_rejected(e: SeedRejectedError):  # type: ignore[no-untyped-def]
        reason = e.reason or "seed_rejected"
        logger.info("Seed rejected: %s", reason)
        return _error(reason, _SEED_STATUS.get(reason, 403), rule=e.rule)

    @app.errorhandler(RateLimitedError)
    def rate_limited(e: RateLimitedError):  # type: ignore[no-untyped-def]
        retry_after = max(1, math.ceil(e.retry_after or 1))
        body, status = _error(
            "rate_limited", 429, bucket=e.bucket, retry_after=e.retry_after
        )
        return body, status, {"Retry-After": str(retry_after)}

    @app.errorhandler(TransRejectedError)
    def trans_rejected(e: TransRejectedError):  # type: ignore[no-untyped-def]
        reason = e.reason or "unauthentic"
        return _error(reason, _TRANS_STATUS.get(reason, 403))

    @app.errorhandler(TokenEncodingError)
    def malformed(e: TokenEncodingError):  # type: ignore[no-untyped-def]
        return _error("malformed", 400, field=e.field)

    @app.route("/keys", methods=["GET"])
    def keys():  # type: ignore[no-untyped-def]
        entry = authority.keyring.current.public_keys().to_dict()
        entry["seed_type"] = authority.seed_type
        others = [dict(peer) for peer in peer_entries]
        r = authority.rates
        return jsonify(
            {
                "aas": [entry] + others,
                "limits": {
                    "site_r": r.site_r,
                    "relay_q": r.relay_q,
                    "interval_s": r.interval_s,
                },
            }
        )

    @app.route("/epoch", methods=["GET"])
    def epoch():  # type: ignore[no-untyped-def]
        return jsonify(authority.beacon.epoch_at(authority.clock()).to_dict())

    @app.route("/seed", methods=["POST"])
    def seed():  # type: ignore[no-untyped-def]
        data = request.get_json(silent=True) or {}
        material = data.get("material")
        seed_type = data.get("seed_type", authority.seed_type)
        if not isinstance(material, str) or not material:
            return _error("malformed", 400, field="material")
        record = authority.validate_seed(material, str(seed_type))
        pseudonym = authority.issue_pseudonym(record)
        return jsonify({"pseudonym": pseudonym.to_text(), "expires_at": pseudonym.expires_at})

    @app.route("/precap", methods=["POST"])
    def precap():  # type: ignore[no-untyped-def]
        header = request.headers.get(CAPABILITY_HEADER)
        if not header:
            return _error("missing_capability", 401)
        try:
            kind = TokenKind(request.args.get("kind", TokenKind.SITE.value))
        except ValueError:
            return _error("unknown_kind", 400)
        tag, credential, blinded = unpack_issuance_header(header)

        if tag == AUTH_CREDIT:
            if kind != TokenKind.RELAY:
                return _error("credit_is_relay_only", 400)
            pre = authority.issue_with_credit(credential.decode("utf-8"), blinded)
            return jsonify({"pre_capability": pre.to_dict()})

        body: Dict[str, Any] = {}
        auth: Any
        if tag == AUTH_PSEUDONYM:
            auth = Pseudonym.decode(credential)
        else:
            assert tag == AUTH_SEED
            seed_type = request.args.get("seed_type", authority.seed_type)
            record: SeedRecord = authority.validate_seed(credential.decode("utf-8"), seed_type)
            pseudonym = authority.issue_pseudonym(record)
            body["pseudonym"] = pseudonym.to_text()
            auth = record
        pre = authority.issue_precapability(auth, blinded, kind)
        body["pre_capability"] = pre.to_dict()
        return jsonify(body)

    @app.route("/trans-redeem", methods=["POST"])
    def trans_redeem():  # type: ignore[no-untyped-def]
        data = request.get_json(silent=True) or {}
        header = data.get("capability") or request.headers.get(CAPABILITY_HEADER)
        if not header:
            return _error("missing_capability", 401)
        credit = authority.redeem_trans(Capability.from_header(str(header)))
        return jsonify({"credit_id": credit.credit_id, "remaining": credit.remaining})

    @app.route("/health", methods=["GET"])
    def health():  # type: ignore[no-untyped-def]
        return jsonify(
            {
                "status": "ok",
                "fingerprint": authority.fingerprint.hex(),
                "seed_type": authority.seed_type,
            }
        )

    return app
