"""
场响应信道模型测试
"""
import numpy as np
import pytest

from services.channel_service import (
    ChannelModelError,
    MimoChannelModel,
    MisoUserModel,
    PathAngles,
    assemble_miso_channels,
    assemble_mimo_channel,
    channel_position_jacobian,
    field_response_matrix,
    miso_channel_position_jacobian,
    random_miso_users,
    random_mimo_model,
    receive_field_vector,
    transmit_field_matrix,
)

FD_STEP = 1e-6


def single_path_model(elevation=np.pi / 2, azimuth=0.0, num_device_antennas=1):
    paths = PathAngles([elevation], [azimuth])
    return MimoChannelModel(1.0, paths, paths, np.array([[1.0]]), num_device_antennas)


def relative_error(actual, expected):
    return np.linalg.norm(actual - expected) / np.linalg.norm(expected)


class TestFieldResponse:

    def test_origin_gives_all_ones(self, rng):
        model = random_mimo_model(rng, 10, 4)
        np.testing.assert_allclose(receive_field_vector((0, 0), model), np.ones(10))

    def test_half_wavelength_phase(self):
        b = receive_field_vector((0.5, 0), single_path_model())
        assert b[0] == pytest.approx(-1.0)

    def test_phase_additivity(self, rng):
        paths = PathAngles(rng.uniform(0, np.pi, 6), rng.uniform(0, np.pi, 6))
        r1, r2 = np.array([0.3, 1.1]), np.array([-0.7, 0.4])
        combined = field_response_matrix(r1 + r2, paths, 1.0)
        product = field_response_matrix(r1, paths, 1.0) * field_response_matrix(r2, paths, 1.0)
        np.testing.assert_allclose(combined, product, atol=1e-12)

    def test_unit_modulus(self, rng):
        model = random_mimo_model(rng, 10, 4)
        np.testing.assert_allclose(np.abs(receive_field_vector((1.7, 2.3), model)), 1.0)


class TestTransmitFieldMatrix:

    def test_first_column_is_ones(self, rng):
        g = transmit_field_matrix(random_mimo_model(rng, 10, 4))
        np.testing.assert_allclose(g[:, 0], 1.0)

    def test_zero_elevation_row(self):
        g = transmit_field_matrix(single_path_model(elevation=0.0, num_device_antennas=5))
        np.testing.assert_allclose(g[0], np.ones(5), atol=1e-12)

    def test_geometric_progression(self, rng):
        model = random_mimo_model(rng, 10, 4)
        g = transmit_field_matrix(model)
        ratios = g[:, 1:] / g[:, :-1]
        expected = np.exp(1j * np.pi * model.transmit_paths.x_weights)
        np.testing.assert_allclose(ratios, np.repeat(expected[:, None], 3, axis=1), atol=1e-12)


class TestMimoChannel:

    def test_scalar_channel_unit_modulus(self):
        h = assemble_mimo_channel([(0.37, 1.21)], single_path_model(elevation=0.8, azimuth=1.9))
        assert h.shape == (1, 1)
        assert abs(h[0, 0]) == pytest.approx(1.0)

    def test_permutation(self, rng):
        model = random_mimo_model(rng, 10, 4)
        layout = rng.uniform(0, 3, (4, 2))
        order = [2, 0, 3, 1]
        np.testing.assert_allclose(assemble_mimo_channel(layout[order], model),
                                   assemble_mimo_channel(layout, model)[order])

    @pytest.mark.parametrize("full", [False, True])
    def test_matches_direct_summation(self, full):
        rng = np.random.default_rng(11)
        model = random_mimo_model(rng, 10, 4, full_path_response=full)
        layout = rng.uniform(0, 3, (4, 2))
        h = assemble_mimo_channel(layout, model)

        g = transmit_field_matrix(model)
        sigma = model.path_response
        expected = np.zeros((4, 4), dtype=complex)
        for m in range(4):
            b = receive_field_vector(layout[m], model)
            for n in range(4):
                for q in range(10):
                    for p in range(10):
                        expected[m, n] += np.conj(b[q]) * sigma[q, p] * g[p, n]
        np.testing.assert_allclose(h, expected, atol=1e-12)

    def test_shape_mismatch(self):
        paths = PathAngles([0.1, 0.2], [0.3, 0.4])
        with pytest.raises(ChannelModelError):
            MimoChannelModel(1.0, paths, paths, np.eye(3), 4)

    def test_angle_count_mismatch(self):
        with pytest.raises(ChannelModelError):
            PathAngles([0.1, 0.2], [0.3])


class TestMisoChannel:

    def test_origin_row(self):
        user = MisoUserModel(1.0, PathAngles([0.4], [1.2]), [1.0], 1.0)
        np.testing.assert_allclose(assemble_miso_channels(np.zeros((3, 2)), [user]), np.ones((1, 3)))

    def test_gain_scaling(self, rng):
        users = random_miso_users(rng, 3, 10, 1.0)
        layout = rng.uniform(0, 2, (4, 2))
        c = 0.5 - 2j
        scaled = list(users)
        scaled[1] = MisoUserModel(1.0, users[1].paths, users[1].gains * c, 1.0)
        np.testing.assert_allclose(assemble_miso_channels(layout, scaled)[1],
                                   np.conj(c) * assemble_miso_channels(layout, users)[1])

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(5)
        users = random_miso_users(rng, 4, 10, 1.0)
        layout = rng.uniform(0, 3, (4, 2))
        h = assemble_miso_channels(layout, users)

        expected = np.zeros((4, 4), dtype=complex)
        for k, user in enumerate(users):
            for m in range(4):
                total = 0j
                for q in range(10):
                    phase = 2 * np.pi * (np.sin(user.paths.elevation[q]) * np.cos(user.paths.azimuth[q]) * layout[m, 0]
                                         + np.cos(user.paths.elevation[q]) * layout[m, 1])
                    total += user.gains[q] * np.exp(1j * phase)
                expected[k, m] = np.conj(total)
        np.testing.assert_allclose(h, expected, atol=1e-12)

    def test_wavelength_mismatch(self, rng):
        users = random_miso_users(rng, 2, 3, 1.0)
        users[1] = MisoUserModel(2.0, users[1].paths, users[1].gains, 1.0)
        with pytest.raises(ChannelModelError):
            assemble_miso_channels(np.zeros((2, 2)), users)


class TestPositionJacobian:

    def test_zero_elevation_has_no_x_dependence(self):
        paths = PathAngles([0.0], [0.7])
        model = MimoChannelModel(1.0, paths, paths, np.array([[1.0]]), 3)
        dx, _ = channel_position_jacobian([(0.2, 0.3), (1.0, 0.4)], model)
        np.testing.assert_allclose(dx, 0.0, atol=1e-12)

    def test_other_rows_are_zero(self, rng):
        model = random_mimo_model(rng, 10, 4)
        dx, dy = channel_position_jacobian(rng.uniform(0, 3, (4, 2)), model)
        for m in range(4):
            others = [l for l in range(4) if l != m]
            assert not np.any(dx[m, others])
            assert not np.any(dy[m, others])

    @pytest.mark.parametrize("seed", range(20))
    def test_mimo_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        model = random_mimo_model(rng, 10, 4)
        layout = rng.uniform(0, 3, (4, 2))
        dx, dy = channel_position_jacobian(layout, model)
        for m in range(4):
            for axis, analytic in ((0, dx[m]), (1, dy[m])):
                step = np.zeros_like(layout)
                step[m, axis] = FD_STEP
                fd = (assemble_mimo_channel(layout + step, model)
                      - assemble_mimo_channel(layout - step, model)) / (2 * FD_STEP)
                assert relative_error(analytic, fd) <= 1e-5

    @pytest.mark.parametrize("seed", range(20))
    def test_miso_matches_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        users = random_miso_users(rng, 4, 10, 1.0)
        layout = rng.uniform(0, 3, (4, 2))
        dx, dy = miso_channel_position_jacobian(layout, users)
        for m in range(4):
            for axis, analytic in ((0, dx[m]), (1, dy[m])):
                step = np.zeros_like(layout)
                step[m, axis] = FD_STEP
                fd = (assemble_miso_channels(layout + step, users)
                      - assemble_miso_channels(layout - step, users)) / (2 * FD_STEP)
                assert relative_error(analytic, fd[:, m]) <= 1e-5


def test_random_model_is_seeded():
    a = random_mimo_model(np.random.default_rng(3), 10, 4)
    b = random_mimo_model(np.random.default_rng(3), 10, 4)
    np.testing.assert_array_equal(a.path_response, b.path_response)
    assert np.count_nonzero(a.path_response - np.diag(np.diag(a.path_response))) == 0
