import numpy as np
import pytest

from loadcast.models import RecurrentSpec, TransformerSpec


@pytest.fixture
def tiny_transformer_spec():
    """Small enough for exhaustive finite-difference checks."""
    return TransformerSpec(n_layers=2, d_model=8, n_heads=2, d_ff=16, dropout_rate=0.0)


@pytest.fixture
def tiny_recurrent_spec():
    return RecurrentSpec(hidden_size=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
