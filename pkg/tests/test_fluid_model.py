"""
Fluid Model Tests

Tests for the fixed-point failure estimate and its calibration helpers.
"""

import math
import unittest

from capguard.abuse_model import AbuseModel
from capguard.consensus import RelayModel, synthesize_network
from capguard.exceptions import SimulationError
from capguard.fluid_model import (
    FluidModel,
    bot_attempts,
    calibrate_kappa,
    desk_scale,
    estimate_bot_rate,
    legit_attempts,
    policy_attempt_cap,
)
from capguard.policy import CircuitPolicy

MODEL = AbuseModel().scaled(10_000)


class TestAttempts(unittest.TestCase):
    def test_legit_retries(self) -> None:
        self.assertEqual(legit_attempts(0.0, 3), 1.0)
        self.assertAlmostEqual(legit_attempts(0.5, 3), 1.875)

    def test_bot_retries_capped(self) -> None:
        self.assertAlmostEqual(bot_attempts(0.5), 2.0)
        self.assertAlmostEqual(bot_attempts(1.0), 1000.0)

    def test_policy_cap(self) -> None:
        self.assertEqual(policy_attempt_cap(None, 600), math.inf)
        policy = CircuitPolicy(4, 1.0, {"captcha": 1.0})
        self.assertEqual(policy_attempt_cap(policy, 600), 4.0)
        self.assertEqual(policy_attempt_cap(policy, 300), 2.0)


class TestFluidModel(unittest.TestCase):
    """Test FluidModel.solve"""

    def setUp(self) -> None:
        """Test setup"""
        self.fluid = FluidModel(synthesize_network(30, seed=1))

    def test_idle_network_never_fails(self) -> None:
        result = self.fluid.solve(AbuseModel(n1_daily=0, n2_daily=0))
        self.assertEqual(result.failure_rate, 0.0)
        self.assertEqual(result.attempt_rate, 0.0)

    def test_uniform_overload(self) -> None:
        # three equal relays each see every circuit once
        relays = [RelayModel(f"R{i}", 1.0, 1.0, guard=True, exit=True) for i in range(3)]
        fluid = FluidModel(relays, max_retries=0)
        model = AbuseModel.from_interval_counts(600 * 2, 0, r1=1.0)
        # 2 attempts/s, each relay takes 2 * 3 slots / 3 relays = 2/s against capacity 1
        self.assertAlmostEqual(fluid.failure_rate(model), 1 - 0.5**3)

    def test_failure_grows_with_botnet(self) -> None:
        small = self.fluid.failure_rate(MODEL, capacity_factor=50)
        large = self.fluid.failure_rate(
            AbuseModel(n2_daily=10_000_000).scaled(10_000), capacity_factor=50
        )
        self.assertLessEqual(small, large)

    def test_capacity_removes_failure(self) -> None:
        self.assertEqual(self.fluid.failure_rate(MODEL, capacity_factor=1e12), 0.0)

    def test_policy_caps_bot_attempts(self) -> None:
        kappa = calibrate_kappa(self.fluid, MODEL, 0.4)
        policy = CircuitPolicy(4, 1.0, {"captcha": 1.0})
        with_policy = self.fluid.solve(MODEL, policy, kappa)
        self.assertLess(with_policy.failure_rate, 0.4)
        self.assertLessEqual(with_policy.attempt_rate, (MODEL.n1 + MODEL.n2) * 4 / MODEL.t0)

    def test_result_dict(self) -> None:
        data = self.fluid.solve(MODEL, capacity_factor=50).to_dict()
        self.assertEqual(set(data["attempts_per_circuit"]), {"legit", "bot"})
        self.assertGreater(data["iterations"], 0)


class TestCalibration(unittest.TestCase):
    """Test calibrate_kappa, estimate_bot_rate and desk_scale"""

    def setUp(self) -> None:
        """Test setup"""
        self.fluid = FluidModel(synthesize_network(30, seed=2))

    def test_kappa_brackets_target(self) -> None:
        kappa = calibrate_kappa(self.fluid, MODEL, 0.4)
        self.assertGreaterEqual(self.fluid.failure_rate(MODEL, None, kappa * 0.99), 0.4)
        self.assertLess(self.fluid.failure_rate(MODEL, None, kappa * 1.01), 0.4)

    def test_unreachable_target(self) -> None:
        with self.assertRaises(SimulationError):
            calibrate_kappa(self.fluid, MODEL, 1.5)

    def test_bot_rate_brackets_observation(self) -> None:
        kappa = calibrate_kappa(self.fluid, MODEL, 0.4)
        r2 = estimate_bot_rate(self.fluid, MODEL, 0.2, kappa)
        self.assertLess(r2, MODEL.r2)
        below = self.fluid.failure_rate(MODEL.with_bot_rate(r2 * 0.99), None, kappa)
        above = self.fluid.failure_rate(MODEL.with_bot_rate(r2 * 1.01), None, kappa)
        self.assertLess(below, 0.2)
        self.assertGreaterEqual(above, 0.2)

    def test_desk_scale(self) -> None:
        rate = self.fluid.solve(MODEL, capacity_factor=1e12).attempt_rate
        scale = desk_scale(self.fluid, MODEL, 600, 1000, capacity_factor=1e12)
        self.assertAlmostEqual(scale, max(1.0, rate * 600 / 1000))
        self.assertEqual(desk_scale(self.fluid, MODEL, 1, 1e12, capacity_factor=1e12), 1.0)


if __name__ == "__main__":
    unittest.main()
