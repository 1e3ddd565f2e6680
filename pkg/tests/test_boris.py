import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boris_sdc.boris import boris_velocity_update, rotate

vec3 = st.lists(
    st.floats(min_value=-10, max_value=10, allow_nan=False), min_size=3, max_size=3
).map(np.array)


def implicit_solve_oracle(v_old, dt, alpha, e_mid, b_old, b_new, c_term):
    """Direct 3x3 solve of the trapezoidal velocity equation.

    (v1 - v0)/dt = alpha*(e_mid + (v1 x b_new + v0 x b_old)/2) + c
    """
    def cross_mat(b):
        return np.array([[0, b[2], -b[1]], [-b[2], 0, b[0]], [b[1], -b[0], 0]])

    lhs = np.eye(3) - 0.5 * dt * alpha * cross_mat(b_new)
    rhs = v_old + dt * (
        alpha * e_mid + c_term + 0.5 * alpha * (cross_mat(b_old) @ v_old)
    )
    return np.linalg.solve(lhs, rhs)


class TestRotate:
    def test_zero_vector_is_identity(self):
        v = np.array([1.0, -2.0, 3.0])
        assert np.allclose(rotate(v, np.zeros(3)), v)

    def test_quarter_turn_about_z(self):
        # tan(theta/2) = 1 rotates by 90 degrees, clockwise about e_z
        out = rotate(np.array([1.0, 0, 0]), np.array([0.0, 0, 1.0]))
        assert np.allclose(out, [0.0, -1.0, 0.0], atol=1e-15)

    def test_speed_preserved_on_many_random_inputs(self):
        rng = np.random.default_rng(42)
        v = rng.normal(scale=10.0, size=(10_000, 3))
        t = rng.normal(scale=2.0, size=(10_000, 3))
        out = rotate(v, t)
        ratio = np.linalg.norm(out, axis=1) / np.linalg.norm(v, axis=1)
        assert np.max(np.abs(ratio - 1.0)) < 1e-14


class TestVelocityUpdate:
    def test_dt_zero_is_identity(self):
        v = np.array([[1.0, 2.0, 3.0]])
        out = boris_velocity_update(v, 0.0, 1.0, np.ones((1, 3)), np.ones((1, 3)),
                                    np.ones((1, 3)), 0.0)
        assert np.allclose(out, v)

    def test_pure_electric_field(self):
        v = np.array([[1.0, 0.0, 0.0]])
        e = np.array([[0.5, -0.2, 1.0]])
        zero = np.zeros((1, 3))
        out = boris_velocity_update(v, 0.2, 2.0, e, zero, zero, 0.0)
        assert np.allclose(out, v + 0.2 * 2.0 * e)

    def test_pure_magnetic_preserves_speed(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=(100, 3))
        b = rng.normal(size=(100, 3))
        out = boris_velocity_update(v, 0.37, 1.3, np.zeros((100, 3)), b, b, 0.0)
        assert np.allclose(
            np.linalg.norm(out, axis=1), np.linalg.norm(v, axis=1), rtol=1e-14
        )

    @pytest.mark.parametrize("constant_b", [True, False])
    def test_matches_implicit_solve_oracle(self, constant_b):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            v0 = rng.normal(scale=5.0, size=3)
            e = rng.normal(scale=3.0, size=3)
            b_old = rng.normal(scale=2.0, size=3)
            b_new = b_old if constant_b else rng.normal(scale=2.0, size=3)
            c = rng.normal(size=3)
            dt = rng.uniform(0.0, 0.5)
            alpha = rng.uniform(0.2, 3.0)
            ref = implicit_solve_oracle(v0, dt, alpha, e, b_old, b_new, c)
            out = boris_velocity_update(
                v0[None], dt, alpha, e[None], b_old[None], b_new[None], c[None]
            )[0]
            assert np.allclose(out, ref, rtol=1e-13, atol=1e-13 * np.linalg.norm(ref))

    @given(v=vec3, b=vec3, e=vec3)
    @settings(max_examples=50, deadline=None)
    def test_oracle_agreement_property(self, v, b, e):
        dt, alpha = 0.25, 1.0
        ref = implicit_solve_oracle(v, dt, alpha, e, b, b, np.zeros(3))
        out = boris_velocity_update(v[None], dt, alpha, e[None], b[None], b[None], 0.0)[0]
        assert np.allclose(out, ref, rtol=1e-12, atol=1e-12)
