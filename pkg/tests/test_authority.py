"""
Access Authority Tests

Tests for AccessAuthority and its HTTP front end.
"""

import shutil
import tempfile
import unittest
from pathlib import Path
from random import Random
from typing import Tuple

from capguard.authority import (
    AccessAuthority,
    MockSeedValidator,
    PuzzleSeedValidator,
    RateConfig,
    short_digest,
)
from capguard.authority_app import create_app
from capguard.blind_signature import AADirectory, AAKeyPair, AAKeyring, blind, unblind, verify_raw
from capguard.epoch_beacon import EpochBeacon
from capguard.exceptions import (
    RateLimitedError,
    SeedRejectedError,
    TokenEncodingError,
    TransRejectedError,
)
from capguard.gatekeeper import Gatekeeper, ValidationRules
from capguard.puzzles import DAKeySet, PuzzleSchedule, SpentStubSet, release_seed, solve
from capguard.state_store import StateStore
from capguard.tokens import (
    AUTH_CREDIT,
    AUTH_PSEUDONYM,
    AUTH_SEED,
    BlindingContext,
    Capability,
    PreCapability,
    Pseudonym,
    TokenKind,
    TokenPayload,
    pack_issuance_header,
)

SECRET = "captcha-secret"
KEYS = AAKeyPair.generate(bits=1024, now=0.0, lifetime_s=10**9)


class FakeClock:
    def __init__(self, now: float = 1000.0) -> None:
        self.now = now

    def __call__(self) -> float:
        return self.now


class AuthorityTestCase(unittest.TestCase):
    """Shared fixture: a captcha AA with two site and one relay issuance per window"""

    def setUp(self) -> None:
        """Test setup"""
        self.temp_dir = tempfile.mkdtemp()
        self.clock = FakeClock()
        self.beacon = EpochBeacon("epoch", 86400, clock=self.clock)
        self.authority = AccessAuthority(
            AAKeyring(KEYS),
            "captcha",
            MockSeedValidator(SECRET),
            StateStore(str(Path(self.temp_dir) / "aa.db")),
            self.beacon,
            rates=RateConfig(site_r=2, relay_q=1, interval_s=600, burst_window_s=600),
            clock=self.clock,
        )

    def tearDown(self) -> None:
        """Test cleanup"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def blind_for(
        self, kind: TokenKind, scope: str = "example.com"
    ) -> Tuple[int, BlindingContext]:
        epoch = self.beacon.current().value
        if kind == TokenKind.TRANS:
            payload = TokenPayload.for_trans(epoch, KEYS.fingerprint)
        elif kind == TokenKind.RELAY:
            payload = TokenPayload.for_relay(b"\x07" * 20, epoch, KEYS.fingerprint)
        else:
            payload = TokenPayload.for_site(scope, epoch, KEYS.fingerprint)
        return blind(payload, KEYS.public_keys().key_for(kind), kind)

    def finish(self, pre: PreCapability, ctx: BlindingContext) -> Capability:
        return unblind(pre.blind_signature, ctx, KEYS.public_keys().key_for(ctx.kind))


class TestSeeds(AuthorityTestCase):
    def test_valid_solution_creates_record(self) -> None:
        token = MockSeedValidator.make_token(SECRET)
        record = self.authority.validate_seed(token, "captcha")
        self.assertEqual(record.seed_type, "captcha")
        self.assertEqual(self.authority.validate_seed(token, "captcha").seed_id, record.seed_id)

    def test_wrong_seed_type(self) -> None:
        with self.assertRaises(SeedRejectedError) as ctx:
            self.authority.validate_seed(MockSeedValidator.make_token(SECRET), "puzzle")
        self.assertEqual(ctx.exception.reason, "wrong_seed_type")

    def test_forged_solution(self) -> None:
        forged = MockSeedValidator.make_token("not-the-secret")
        with self.assertRaises(SeedRejectedError) as ctx:
            self.authority.validate_seed(forged, "captcha")
        self.assertEqual(ctx.exception.reason, "invalid_solution")
        with self.assertRaises(SeedRejectedError):
            self.authority.validate_seed("no-separator", "captcha")

    def test_unknown_seed_type_at_construction(self) -> None:
        with self.assertRaises(SeedRejectedError):
            AccessAuthority(
                AAKeyring(KEYS),
                "sms",
                MockSeedValidator(SECRET),
                self.authority.store,
                self.beacon,
            )

    def test_short_digest(self) -> None:
        self.assertEqual(len(short_digest("seed")), 16)
        self.assertEqual(short_digest("seed"), short_digest(b"seed"))


class TestPseudonyms(AuthorityTestCase):
    def test_resolves_to_seed(self) -> None:
        record = self.authority.validate_seed(MockSeedValidator.make_token(SECRET), "captcha")
        pseudonym = self.authority.issue_pseudonym(record)
        self.assertEqual(self.authority.resolve_pseudonym(pseudonym), record.seed_id)
        self.assertNotIn(record.seed_id.encode(), pseudonym.encode())

    def test_forged_tag(self) -> None:
        record = self.authority.validate_seed(MockSeedValidator.make_token(SECRET), "captcha")
        pseudonym = self.authority.issue_pseudonym(record)
        forged = Pseudonym(
            pseudonym.nonce_r, b"\x00" * 64, pseudonym.issued_at, pseudonym.expires_at
        )
        with self.assertRaises(SeedRejectedError) as ctx:
            self.authority.resolve_pseudonym(forged)
        self.assertEqual(ctx.exception.reason, "invalid_pseudonym")

    def test_expired(self) -> None:
        record = self.authority.validate_seed(MockSeedValidator.make_token(SECRET), "captcha")
        pseudonym = self.authority.issue_pseudonym(record)
        self.clock.now += 86400
        with self.assertRaises(SeedRejectedError) as ctx:
            self.authority.resolve_pseudonym(pseudonym)
        self.assertEqual(ctx.exception.reason, "expired_pseudonym")

    def test_pseudonym_key_persists(self) -> None:
        stored = self.authority.store.get_meta("pseudonym_key")
        self.assertEqual(stored, self.authority.pseudonym_key.hex())


class TestIssuance(AuthorityTestCase):
    def setUp(self) -> None:
        super().setUp()
        self.record = self.authority.validate_seed(
            MockSeedValidator.make_token(SECRET), "captcha"
        )
        self.pseudonym = self.authority.issue_pseudonym(self.record)

    def test_issued_capability_verifies(self) -> None:
        blinded, ctx = self.blind_for(TokenKind.SITE)
        pre = self.authority.issue_precapability(self.pseudonym, blinded, TokenKind.SITE)
        self.assertEqual(pre.aa_fingerprint, KEYS.fingerprint)
        cap = self.finish(pre, ctx)
        self.assertTrue(verify_raw(cap, KEYS.public_keys().site))

    def test_site_bucket_exhausts(self) -> None:
        for _ in range(2):
            blinded, _ = self.blind_for(TokenKind.SITE)
            self.authority.issue_precapability(self.pseudonym, blinded, TokenKind.SITE)
        blinded, _ = self.blind_for(TokenKind.SITE)
        with self.assertRaises(RateLimitedError) as ctx:
            self.authority.issue_precapability(self.pseudonym, blinded, TokenKind.SITE)
        self.assertEqual(ctx.exception.bucket, "site")
        self.assertAlmostEqual(ctx.exception.retry_after or 0, 300.0)

    def test_buckets_are_independent(self) -> None:
        for _ in range(2):
            blinded, _ = self.blind_for(TokenKind.SITE)
            self.authority.issue_precapability(self.record, blinded, TokenKind.SITE)
        blinded, _ = self.blind_for(TokenKind.RELAY)
        self.authority.issue_precapability(self.record, blinded, TokenKind.RELAY)
        levels = self.authority.bucket_levels(self.record.seed_id)
        self.assertAlmostEqual(levels["site"], 0.0)
        self.assertAlmostEqual(levels["relay"], 0.0)

    def test_refill_after_interval(self) -> None:
        for _ in range(2):
            blinded, _ = self.blind_for(TokenKind.SITE)
            self.authority.issue_precapability(self.pseudonym, blinded, TokenKind.SITE)
        self.clock.now += 300
        blinded, _ = self.blind_for(TokenKind.SITE)
        self.authority.issue_precapability(self.pseudonym, blinded, TokenKind.SITE)

    def test_trans_draws_on_site_bucket(self) -> None:
        for _ in range(2):
            blinded, _ = self.blind_for(TokenKind.TRANS)
            self.authority.issue_precapability(self.pseudonym, blinded, TokenKind.TRANS)
        blinded, _ = self.blind_for(TokenKind.SITE)
        with self.assertRaises(RateLimitedError):
            self.authority.issue_precapability(self.pseudonym, blinded, TokenKind.SITE)

    def test_twenty_fifth_request_waits_for_refill(self) -> None:
        authority = AccessAuthority(
            AAKeyring(KEYS),
            "captcha",
            MockSeedValidator(SECRET),
            StateStore(str(Path(self.temp_dir) / "window.db")),
            self.beacon,
            rates=RateConfig(site_r=24, relay_q=12, interval_s=600, burst_window_s=600),
            clock=self.clock,
        )
        record = authority.validate_seed(MockSeedValidator.make_token(SECRET), "captcha")
        pseudonym = authority.issue_pseudonym(record)
        for _ in range(24):
            blinded, _ = self.blind_for(TokenKind.SITE)
            authority.issue_precapability(pseudonym, blinded, TokenKind.SITE)
        blinded, _ = self.blind_for(TokenKind.SITE)
        with self.assertRaises(RateLimitedError) as ctx:
            authority.issue_precapability(pseudonym, blinded, TokenKind.SITE)
        self.assertAlmostEqual(ctx.exception.retry_after or 0, 25.0)

        self.clock.now += 24.9
        with self.assertRaises(RateLimitedError):
            authority.issue_precapability(pseudonym, blinded, TokenKind.SITE)
        self.clock.now += 0.1
        pre = authority.issue_precapability(pseudonym, blinded, TokenKind.SITE)
        self.assertEqual(pre.kind, TokenKind.SITE)

    def test_out_of_range_message_costs_nothing(self) -> None:
        with self.assertRaises(TokenEncodingError):
            self.authority.issue_precapability(self.pseudonym, 0, TokenKind.SITE)
        levels = self.authority.bucket_levels(self.record.seed_id)
        self.assertAlmostEqual(levels["site"], 2.0)


class TestTransRedemption(AuthorityTestCase):
    def setUp(self) -> None:
        super().setUp()
        record = self.authority.validate_seed(MockSeedValidator.make_token(SECRET), "captcha")
        blinded, ctx = self.blind_for(TokenKind.TRANS)
        pre = self.authority.issue_precapability(record, blinded, TokenKind.TRANS)
        self.trans = self.finish(pre, ctx)

    def test_redeem_grants_three_relay_issuances(self) -> None:
        credit = self.authority.redeem_trans(self.trans)
        self.assertEqual(credit.remaining, 3)
        for _ in range(3):
            blinded, _ = self.blind_for(TokenKind.RELAY)
            pre = self.authority.issue_with_credit(credit.credit_id, blinded)
            self.assertEqual(pre.kind, TokenKind.RELAY)
        blinded, _ = self.blind_for(TokenKind.RELAY)
        with self.assertRaises(TransRejectedError):
            self.authority.issue_with_credit(credit.credit_id, blinded)

    def test_double_redeem(self) -> None:
        self.authority.redeem_trans(self.trans)
        with self.assertRaises(TransRejectedError) as ctx:
            self.authority.redeem_trans(self.trans)
        self.assertEqual(ctx.exception.reason, "spent")

    def test_next_epoch_expires(self) -> None:
        self.clock.now += 86400
        with self.assertRaises(TransRejectedError) as ctx:
            self.authority.redeem_trans(self.trans)
        self.assertEqual(ctx.exception.reason, "expired")

    def test_site_capability_is_not_trans(self) -> None:
        record = self.authority.validate_seed(MockSeedValidator.make_token(SECRET), "captcha")
        blinded, ctx = self.blind_for(TokenKind.SITE)
        site_cap = self.finish(
            self.authority.issue_precapability(record, blinded, TokenKind.SITE), ctx
        )
        with self.assertRaises(TransRejectedError) as err:
            self.authority.redeem_trans(site_cap)
        self.assertEqual(err.exception.reason, "unauthentic")

    def test_forged_signature(self) -> None:
        trans = self.trans
        forged = Capability(trans.payload, trans.signature ^ 1, trans.kind, trans.modulus_bytes)
        with self.assertRaises(TransRejectedError) as ctx:
            self.authority.redeem_trans(forged)
        self.assertEqual(ctx.exception.reason, "unauthentic")

    def test_epoch_rollover_purges_spent_set(self) -> None:
        self.authority.redeem_trans(self.trans)
        self.clock.now += 86400
        self.assertTrue(self.authority.rotate_epoch_if_needed())
        self.assertFalse(self.authority.store.is_trans_spent(self.trans.digest().hex()))


class TestLogPrivacy(AuthorityTestCase):
    """Logs carry digests only, never seeds, payloads or token bytes"""

    def test_issue_redeem_and_spend(self) -> None:
        token = MockSeedValidator.make_token(SECRET)
        directory = AADirectory()
        directory.register(KEYS.public_keys())
        rules = ValidationRules.for_site("example.com", directory, self.beacon)
        gatekeeper = Gatekeeper(rules, rng=Random(0), clock=self.clock)

        with self.assertLogs("capguard", level="DEBUG") as logs:
            record = self.authority.validate_seed(token, "captcha")
            pseudonym = self.authority.issue_pseudonym(record)
            site_blinded, site_ctx = self.blind_for(TokenKind.SITE)
            site_cap = self.finish(
                self.authority.issue_precapability(pseudonym, site_blinded, TokenKind.SITE),
                site_ctx,
            )
            trans_blinded, trans_ctx = self.blind_for(TokenKind.TRANS)
            trans_cap = self.finish(
                self.authority.issue_precapability(pseudonym, trans_blinded, TokenKind.TRANS),
                trans_ctx,
            )
            self.authority.redeem_trans(trans_cap)
            self.assertTrue(gatekeeper.check(site_cap).accepted)
            self.assertFalse(gatekeeper.check(site_cap).accepted)

        output = "\n".join(logs.output)
        secrets = [token, record.seed_id]
        for cap, blinded in ((site_cap, site_blinded), (trans_cap, trans_blinded)):
            secrets += [
                cap.payload.encode().hex(),
                cap.payload.nonce.hex(),
                cap.encode().hex(),
                cap.digest().hex(),
                str(blinded),
                format(blinded, "x"),
            ]
        for secret in secrets:
            self.assertNotIn(secret, output)


class TestPuzzleStubStore(unittest.TestCase):
    """Spent stubs in the AA store, wired the way the service runner wires them"""

    SCHEDULE = PuzzleSchedule(release_period_s=300, acceptance_period_s=60)
    P_P = 0.05

    def setUp(self) -> None:
        """Test setup"""
        self.temp_dir = tempfile.mkdtemp()
        self.store = StateStore(str(Path(self.temp_dir) / "aa.db"))
        da_keys = DAKeySet.generate(count=3, bits=1024)
        self.seeds = {p: release_seed(da_keys, p, self.SCHEDULE, quorum=2) for p in (1, 2)}

    def tearDown(self) -> None:
        """Test cleanup"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def validator(self) -> PuzzleSeedValidator:
        spent = SpentStubSet(
            on_insert=self.store.mark_stub_spent, on_rotate=self.store.purge_stubs
        )
        return PuzzleSeedValidator(
            KEYS.fingerprint, self.SCHEDULE, self.P_P, self.seeds.__getitem__, spent
        )

    def stub_text(self, period: int, seed: int) -> str:
        result = solve(
            self.seeds[period], KEYS.fingerprint, self.P_P, 1.0, lambda: 0.0, Random(seed)
        )
        assert result.stub is not None
        return result.stub.to_text()

    def test_rows_dropped_when_period_changes(self) -> None:
        validator = self.validator()
        for seed in (1, 2):
            validator.validate(self.stub_text(1, seed), now=300.0)
        self.assertEqual(self.store.get_stats()["spent_stubs"], 2)

        validator.validate(self.stub_text(2, 3), now=600.0)
        self.assertEqual(self.store.get_stats()["spent_stubs"], 1)

    def test_replay_after_restart_rejected(self) -> None:
        stub = self.stub_text(1, 1)
        self.validator().validate(stub, now=300.0)
        with self.assertRaises(SeedRejectedError) as ctx:
            self.validator().validate(stub, now=310.0)
        self.assertEqual(ctx.exception.rule, "v")
        self.assertEqual(self.store.get_stats()["spent_stubs"], 1)


class TestAuthorityApp(AuthorityTestCase):
    """Test the Flask front end"""

    def setUp(self) -> None:
        super().setUp()
        self.app = create_app(self.authority)
        self.app.config["TESTING"] = True
        self.client = self.app.test_client()

    def test_keys(self) -> None:
        body = self.client.get("/keys").get_json()
        self.assertEqual(body["aas"][0]["seed_type"], "captcha")
        self.assertEqual(body["aas"][0]["fingerprint"], KEYS.fingerprint.hex())
        self.assertEqual(body["limits"]["site_r"], 2)

    def test_epoch(self) -> None:
        body = self.client.get("/epoch").get_json()
        self.assertEqual(bytes.fromhex(body["value"]), self.beacon.current().value)

    def test_health(self) -> None:
        body = self.client.get("/health").get_json()
        self.assertEqual(body["status"], "ok")

    def test_seed_then_precap(self) -> None:
        response = self.client.post(
            "/seed", json={"material": MockSeedValidator.make_token(SECRET)}
        )
        self.assertEqual(response.status_code, 200)
        pseudonym = Pseudonym.from_text(response.get_json()["pseudonym"])

        blinded, ctx = self.blind_for(TokenKind.SITE)
        header = pack_issuance_header(AUTH_PSEUDONYM, pseudonym.encode(), blinded)
        response = self.client.post("/precap?kind=site", headers={"X-Capability": header})
        self.assertEqual(response.status_code, 200)
        pre = PreCapability.from_dict(response.get_json()["pre_capability"])
        self.assertEqual(self.finish(pre, ctx).kind, TokenKind.SITE)

    def test_precap_with_seed_returns_pseudonym(self) -> None:
        blinded, _ = self.blind_for(TokenKind.SITE)
        token = MockSeedValidator.make_token(SECRET).encode()
        header = pack_issuance_header(AUTH_SEED, token, blinded)
        body = self.client.post("/precap", headers={"X-Capability": header}).get_json()
        self.assertIn("pseudonym", body)
        self.assertIn("pre_capability", body)

    def test_rate_limited_sets_retry_after(self) -> None:
        token = MockSeedValidator.make_token(SECRET).encode()
        for _ in range(2):
            blinded, _ = self.blind_for(TokenKind.SITE)
            header = pack_issuance_header(AUTH_SEED, token, blinded)
            self.assertEqual(
                self.client.post("/precap", headers={"X-Capability": header}).status_code, 200
            )
        blinded, _ = self.blind_for(TokenKind.SITE)
        header = pack_issuance_header(AUTH_SEED, token, blinded)
        response = self.client.post("/precap", headers={"X-Capability": header})
        self.assertEqual(response.status_code, 429)
        self.assertEqual(response.headers["Retry-After"], "300")

    def test_missing_header(self) -> None:
        self.assertEqual(self.client.post("/precap").status_code, 401)

    def test_malformed_header(self) -> None:
        response = self.client.post("/precap", headers={"X-Capability": "garbage"})
        self.assertEqual(response.status_code, 400)

    def test_unknown_kind(self) -> None:
        blinded, _ = self.blind_for(TokenKind.SITE)
        header = pack_issuance_header(AUTH_SEED, b"x.y", blinded)
        response = self.client.post("/precap?kind=bogus", headers={"X-Capability": header})
        self.assertEqual(response.status_code, 400)

    def test_wrong_solution_is_forbidden(self) -> None:
        response = self.client.post("/seed", json={"material": "nonce.badtag"})
        self.assertEqual(response.status_code, 403)
        self.assertEqual(response.get_json()["error"], "invalid_solution")

    def test_seed_without_material(self) -> None:
        self.assertEqual(self.client.post("/seed", json={}).status_code, 400)

    def test_trans_redeem_and_credit(self) -> None:
        record = self.authority.validate_seed(MockSeedValidator.make_token(SECRET), "captcha")
        blinded, ctx = self.blind_for(TokenKind.TRANS)
        trans = self.finish(
            self.authority.issue_precapability(record, blinded, TokenKind.TRANS), ctx
        )

        response = self.client.post("/trans-redeem", json={"capability": trans.to_header()})
        self.assertEqual(response.status_code, 200)
        credit_id = response.get_json()["credit_id"]

        blinded, _ = self.blind_for(TokenKind.RELAY)
        header = pack_issuance_header(AUTH_CREDIT, credit_id.encode(), blinded)
        self.assertEqual(
            self.client.post("/precap?kind=site", headers={"X-Capability": header}).status_code,
            400,
        )
        response = self.client.post("/precap?kind=relay", headers={"X-Capability": header})
        self.assertEqual(response.status_code, 200)

        again = self.client.post("/trans-redeem", json={"capability": trans.to_header()})
        self.assertEqual(again.status_code, 409)


if __name__ == "__main__":
    unittest.main()
