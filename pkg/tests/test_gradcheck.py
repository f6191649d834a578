import pytest

from socforecast.gradcheck import check_autoencoder, check_bptt, check_lstm_cell, run_suite

LIMIT = 1e-4


class TestSuite:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_every_component_below_limit(self, seed):
        results = run_suite(seed)
        assert len(results) == 16
        for name, err in results.items():
            assert err < LIMIT, name

    def test_component_order(self):
        names = list(run_suite(0))
        assert names[:5] == ["dense", "batchnorm", "mse", "autoencoder", "lstm_cell"]
        assert names[-2:] == ["bilstm_head", "lstm_head"]

    def test_bptt_grid(self):
        grid = check_bptt(3)
        assert set(grid) == {(T, h) for T in (1, 2, 5) for h in (1, 2, 4)}
        assert max(grid.values()) < LIMIT

    def test_individual_checks(self):
        assert check_lstm_cell(4) < LIMIT
        assert check_autoencoder(4) < LIMIT
