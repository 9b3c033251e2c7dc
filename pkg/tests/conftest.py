import os
import sys

import numpy as np
import pytest

# Load environment variables from .env file before any tests run
from dotenv import load_dotenv
parent_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
load_dotenv(os.path.join(parent_dir, '.env'))
if parent_dir not in sys.path:
    sys.path.insert(0, parent_dir)

from channel import FrameParams, make_frame, make_rng, snr_db_to_noise_var
from ldpc import ParityCheckMatrix, gallager_construct, systematize

# Full-rank (8,4) code used for the exhaustive-oracle checks
SMALL_CODE_ROWS = [
    [0, 1, 2, 4],
    [1, 2, 3, 5],
    [0, 1, 3, 6],
    [0, 2, 3, 7],
]


@pytest.fixture(autouse=True)
def isolate_log_dir(monkeypatch, tmp_path):
    """Keep CLI/API log files out of the working tree"""
    import settings
    monkeypatch.setattr(settings, 'LOG_DIR', str(tmp_path / 'logs'))
    yield


@pytest.fixture(scope='session')
def small_code():
    """(8,4) parity-check matrix"""
    return ParityCheckMatrix.from_rows(8, SMALL_CODE_ROWS)


@pytest.fixture(scope='session')
def small_encoder(small_code):
    return systematize(small_code)


@pytest.fixture(scope='session')
def code_32():
    """(32,16) regular (3,6) code"""
    return gallager_construct(32, 3, 6, seed=7)


@pytest.fixture(scope='session')
def encoder_32(code_32):
    return systematize(code_32)


@pytest.fixture(scope='session')
def code_10():
    """(10,5) regular (2,4) code, small enough to list every codeword"""
    return gallager_construct(10, 2, 4, seed=3)


@pytest.fixture
def frame_factory():
    """Build a frame for (encoder or None, snr_db, seed, index)"""
    def build(encoder, snr_db, seed=0, index=0, n_symbols=20, sigma1_sq=0.5, sigma2_sq=1.0):
        noise_var = 0.0 if snr_db is None else snr_db_to_noise_var(snr_db, sigma1_sq)
        params = FrameParams(noise_var=noise_var, sigma1_sq=sigma1_sq, sigma2_sq=sigma2_sq,
                             n_symbols=n_symbols)
        return make_frame(encoder, make_rng(seed, index), params)
    return build


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
