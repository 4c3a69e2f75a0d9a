"""Loss semantics: masked cosine, masked MSE, and the RMSE metric."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emae.errors import ContractError, DegenerateLossError, ShapeError
from emae.losses import LossKind, mean_squared_distance, mse_loss, rmse_mm, similarity_loss
from emae.masking import Mask, MaskSpec, generate_mask
from emae.tensor import Tensor, backward


def random_case(seed, shape=(2, 4, 6), ratio=0.5):
    gen = np.random.default_rng(seed)
    x = gen.normal(size=shape)
    x_hat = gen.normal(size=shape)
    mask = generate_mask(MaskSpec(shape[-2], shape[-1], ratio, rng_seed=seed))
    return x_hat, x, mask


def gather_cosine_oracle(x_hat, x, mask):
    """Independent path: gather the masked elements and cosine them directly."""
    rows = [i for i, _ in mask.positions()]
    cols = [j for _, j in mask.positions()]
    a = np.asarray(x_hat)[..., rows, cols].ravel()
    b = np.asarray(x)[..., rows, cols].ravel()
    return 1.0 - float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_perfect_reconstruction_is_zero():
    _, x, mask = random_case(0)
    x_hat = x.copy()
    # arbitrary garbage at unmasked positions must not matter
    keep = mask.as_matrix().astype(bool)
    x_hat[..., ~keep] = 123.456
    loss = similarity_loss(x_hat, x, mask)
    assert loss.kind is LossKind.SIMILARITY
    assert abs(loss.value) <= 1e-12


def test_antiparallel_is_two():
    _, x, mask = random_case(1)
    loss = similarity_loss(-x, x, mask)
    assert abs(loss.value - 2.0) <= 1e-12


def test_hand_value_point_two():
    # masked sub-vectors x=(1,2), x_hat=(2,1): 1 - 4/5 = 0.2
    x = np.array([[1.0, 0.0], [0.0, 2.0]])
    x_hat = np.array([[2.0, 7.0], [-7.0, 1.0]])
    mask = Mask(flat_indices=(0, 3), rows=2, cols=2)
    loss = similarity_loss(x_hat, x, mask)
    assert abs(loss.value - 0.2) <= 1e-12


def test_invariant_to_unmasked_perturbations():
    gen = np.random.default_rng(42)
    for trial in range(100):
        x_hat, x, mask = random_case(trial + 500)
        base = similarity_loss(x_hat, x, mask).value
        noise = gen.normal(size=x_hat.shape) * (1.0 - mask.as_matrix())
        perturbed = similarity_loss(x_hat + 1e3 * noise, x, mask).value
        assert abs(perturbed - base) <= 1e-12


def test_matches_gather_oracle():
    for trial in range(50):
        x_hat, x, mask = random_case(trial + 900)
        got = similarity_loss(x_hat, x, mask).value
        assert abs(got - gather_cosine_oracle(x_hat, x, mask)) <= 1e-12


def test_scale_invariance_in_reconstruction():
    # the denominator guard shifts the cosine by about eps/(alpha*|x_hat||x|),
    # so extreme alphas are invariant to 1e-9 and moderate ones far tighter
    for alpha in (1e-3, 0.5, 2.0, 1e4):
        x_hat, x, mask = random_case(77)
        a = similarity_loss(x_hat, x, mask).value
        b = similarity_loss(alpha * x_hat, x, mask).value
        assert abs(a - b) <= 1e-9
    for alpha in (0.5, 2.0):
        x_hat, x, mask = random_case(78)
        a = similarity_loss(x_hat, x, mask).value
        b = similarity_loss(alpha * x_hat, x, mask).value
        assert abs(a - b) <= 1e-12


@given(st.integers(min_value=0, max_value=100_000))
@settings(max_examples=80, deadline=None)
def test_range_zero_to_two(seed):
    x_hat, x, mask = random_case(seed)
    value = similarity_loss(x_hat, x, mask).value
    assert 0.0 <= value <= 2.0


def test_empty_mask_is_degenerate():
    x = np.ones((2, 2))
    with pytest.raises(DegenerateLossError):
        similarity_loss(x, x, Mask(flat_indices=(), rows=2, cols=2))


def test_all_zero_masked_target_is_degenerate():
    x = np.zeros((2, 2))
    x[0, 1] = 5.0  # only unmasked position is nonzero
    mask = Mask(flat_indices=(0, 3), rows=2, cols=2)
    with pytest.raises(DegenerateLossError):
        similarity_loss(np.ones((2, 2)), x, mask)


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        similarity_loss(np.ones((2, 3)), np.ones((3, 2)), Mask((0,), 2, 3))


def test_similarity_loss_differentiable_wrt_reconstruction():
    x_hat, x, mask = random_case(5)
    t = Tensor(x_hat, requires_grad=True)
    loss = similarity_loss(t, x, mask)
    grads = backward(loss.node)
    grad = grads[t].data
    # gradient lives only on masked positions
    assert np.all(grad[:, mask.as_matrix() == 0.0] == 0.0)
    assert np.any(grad != 0.0)


# ---------------------------------------------------------------------------
# mse


def test_mse_zero_when_equal():
    _, x, mask = random_case(8)
    assert mse_loss(x, x, mask).value == 0.0


def test_mse_unit_squares():
    x = np.zeros((2, 2))
    x_hat = np.array([[1.0, 9.0], [9.0, -1.0]])  # masked diffs (1, -1)
    mask = Mask(flat_indices=(0, 3), rows=2, cols=2)
    assert mse_loss(x_hat, x, mask).value == 1.0


def test_mse_matches_brute_force():
    for trial in range(30):
        x_hat, x, mask = random_case(trial + 300)
        total, count = 0.0, 0
        for b in range(x.shape[0]):
            for i, j in mask.positions():
                total += (x_hat[b, i, j] - x[b, i, j]) ** 2
                count += 1
        got = mse_loss(x_hat, x, mask).value
        assert abs(got - total / count) <= 1e-12 * max(1.0, abs(total))


def test_mse_empty_mask_degenerate():
    with pytest.raises(DegenerateLossError):
        mse_loss(np.ones((2, 2)), np.ones((2, 2)), Mask((), 2, 2))


# ---------------------------------------------------------------------------
# rmse


def test_rmse_zero_when_equal():
    p = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert rmse_mm(p, p).value == 0.0


def test_rmse_single_offset_hand_value():
    assert rmse_mm(np.array([[3.0, 4.0]]), np.zeros((1, 2))).value == 5.0


def test_rmse_two_sample_hand_value():
    pred = np.array([[3.0, 4.0], [0.0, 0.0]])
    target = np.zeros((2, 2))
    assert abs(rmse_mm(pred, target).value - np.sqrt(25.0 / 2.0)) <= 1e-12


def test_rmse_permutation_invariant_and_zero_iff_equal():
    gen = np.random.default_rng(0)
    pred = gen.normal(size=(10, 2))
    target = gen.normal(size=(10, 2))
    base = rmse_mm(pred, target).value
    perm = gen.permutation(10)
    assert abs(rmse_mm(pred[perm], target[perm]).value - base) <= 1e-12
    assert base > 0.0
    assert rmse_mm(pred, pred.copy()).value == 0.0


def test_rmse_empty_rejected():
    with pytest.raises((ContractError, ShapeError)):
        rmse_mm(np.zeros((0, 2)), np.zeros((0, 2)))


def test_mean_squared_distance_drives_rmse():
    gen = np.random.default_rng(3)
    pred = gen.normal(size=(6, 2))
    target = gen.normal(size=(6, 2))
    node = mean_squared_distance(Tensor(pred, requires_grad=True), target)
    assert abs(float(node.data) - np.mean(np.sum((pred - target) ** 2, axis=1))) <= 1e-12
