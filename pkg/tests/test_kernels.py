import os
import subprocess
import sys

import numpy as np
import pytest

from immunekit import _kernels
from oracles import agree_count, bits_of, longest_run


@pytest.fixture
def numpy_only(monkeypatch):
    monkeypatch.setattr(_kernels, "USE_NUMBA", False)


def _random_pair(rng, n, m, length):
    a = rng.integers(0, 2, size=(n, length), dtype=np.uint8)
    b = rng.integers(0, 2, size=(m, length), dtype=np.uint8)
    care = rng.random((m, length)) < 0.8
    return a, b, care


@pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba not installed")
@pytest.mark.parametrize("kind", [_kernels.HAMMING, _kernels.CONTIGUOUS])
@pytest.mark.parametrize("use_care", [False, True])
def test_numba_and_numpy_paths_agree(kind, use_care):
    rng = np.random.default_rng(11)
    for length in (1, 5, 16, 33):
        a, b, care = _random_pair(rng, 40, 25, length)
        c = care if use_care else None
        full = np.ones_like(care) if c is None else c
        np.testing.assert_array_equal(
            _kernels._affinity_matrix_nb(a, b, kind, full), _kernels.affinity_matrix_np(a, b, kind, c))
        for r in range(1, length + 1):
            expected = (_kernels.affinity_matrix_np(a, b, kind, c) >= r).any(axis=1)
            np.testing.assert_array_equal(_kernels._match_any_nb(a, b, kind, r, full), expected)


def test_numpy_path_matches_scalar_oracle(numpy_only):
    length = 6
    space = _kernels.universe(length)
    ham = _kernels.affinity_matrix(space, space, _kernels.HAMMING)
    run = _kernels.affinity_matrix(space, space, _kernels.CONTIGUOUS)
    for i in range(0, 64, 7):
        for j in range(64):
            a, b = bits_of(i, length), bits_of(j, length)
            assert ham[i, j] == agree_count(a, b)
            assert run[i, j] == longest_run(a, b)


def test_dont_care_positions_always_agree():
    a = np.array([[0, 0, 0, 0]], dtype=np.uint8)
    b = np.array([[1, 1, 0, 0]], dtype=np.uint8)
    care = np.array([[False, True, True, True]])
    assert _kernels.affinity_matrix(a, b, _kernels.HAMMING, care)[0, 0] == 3
    assert _kernels.affinity_matrix(a, b, _kernels.CONTIGUOUS, care)[0, 0] == 2


def test_match_any_empty_operands():
    a = np.zeros((3, 4), dtype=np.uint8)
    out = _kernels.match_any(a, np.zeros((0, 4), dtype=np.uint8), _kernels.HAMMING, 1)
    assert out.tolist() == [False, False, False]


def test_universe_is_msb_first():
    u = _kernels.universe(3)
    assert u.shape == (8, 3)
    assert u[1].tolist() == [0, 0, 1]
    assert u[6].tolist() == [1, 1, 0]


@pytest.mark.parametrize("flag,expected", [("1", "False"), ("", str(_kernels.NUMBA_AVAILABLE)), ("off", str(_kernels.NUMBA_AVAILABLE))])
def test_env_flag_selects_path(flag, expected):
    env = dict(os.environ, IMMUNEKIT_DISABLE_NUMBA=flag)
    out = subprocess.run(
        [sys.executable, "-c", "from immunekit import _kernels; print(_kernels.USE_NUMBA)"],
        env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
