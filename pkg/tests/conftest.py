import numpy as np
import pytest

from cvit.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(arr, dtype=np.float64):
    return Tensor(np.array(arr, dtype=dtype), requires_grad=True)


def tiny_config(image_size=64, depth=2):
    """Smallest topology-preserving CViT; used for whole-model gradient checks."""
    from cvit.model import CViTConfig

    return CViTConfig.reduced(image_size=image_size, stage_channels=(2, 2, 2, 2, 4), embed_dim=16, heads=8,
                              encoder_depth=depth, mlp_hidden=16, head_hidden=16)


def whole_model_gradcheck(seed=0, max_coords=4):
    """Max relative error per parameter tensor (plus input) for forward + log loss, train mode, float64."""
    from cvit.gradcheck import check_many
    from cvit.model import cvit_forward, init_parameters
    from cvit.nn import bce_with_logits
    from cvit.tensor import Tensor

    model = init_parameters(tiny_config(), seed=seed, dtype=np.float64)
    for t in model.parameters():  # move biases and norm params off their tidy init values
        t.data += np.random.default_rng(seed + 1).normal(0, 0.05, t.shape)
    rng = np.random.default_rng(seed + 2)
    x = Tensor(rng.normal(size=(4, 3, 64, 64)), requires_grad=True, name="input")
    y = np.array([0, 1, 1, 0])
    f = lambda: bce_with_logits(cvit_forward(model, x), y)
    return check_many(f, model.parameters() + [x], max_coords=max_coords, rng=rng)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
