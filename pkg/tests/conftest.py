import numpy as np
import pytest

from textled.charset import CharSet
from textled.similarity import SimilarityMatrix, TransitionMatrix, build_transition_matrix


@pytest.fixture(scope="session")
def charset():
    return CharSet.default36()


@pytest.fixture(scope="session")
def transition_matrix(charset):
    """Small deterministic matrix over the full charset (uniform-ish rows),
    cheap to build compared with rendering the glyph variants."""
    k = charset.size
    sims = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            sims[i, j] = 1.0 if i == j else 0.5 + 0.4 * np.cos(i * 7 + j * 3)
    sims = np.maximum(sims, sims.T)
    return build_transition_matrix(SimilarityMatrix(charset.symbols, sims), tau=0.5)


def uniform_transition(symbols) -> TransitionMatrix:
    """Uniform off-diagonal substitution matrix for hand-built cases."""
    k = len(symbols)
    probs = np.full((k, k), 1.0 / (k - 1))
    np.fill_diagonal(probs, 0.0)
    return TransitionMatrix(tuple(symbols), probs, tau=1.0)
