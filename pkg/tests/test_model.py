"""Model assembly: shapes, mode switching, checkpoints, weight import."""

import numpy as np
import pytest

from emae.errors import (
    CheckpointFormatError,
    ContractError,
    ModeError,
    ShapeError,
    WeightImportError,
)
from emae.losses import mean_squared_distance, similarity_loss
from emae.masking import MaskSpec, apply_mask, generate_mask
from emae.model import (
    DecoderConfig,
    EncoderConfig,
    ModelBundle,
    decoder_config,
    decoder_forward,
    encoder_forward,
    finetune_forward,
    head_forward,
    import_external_weights,
    init_pretrain_model,
    init_scratch_model,
    load_checkpoint,
    pretrain_forward,
    save_checkpoint,
    to_finetune,
)
from emae.tensor import Tensor, max_relative_gradient_error


def small_encoder(**overrides):
    base = dict(
        channels=16,
        time_len=128,
        temporal_kernel=8,
        temporal_stride=8,
        temporal_filters=8,
        embed_dim=32,
        num_layers=2,
        num_heads=4,
        mlp_ratio=2.0,
    )
    base.update(overrides)
    return EncoderConfig(**base)


def tiny_encoder():
    return EncoderConfig(
        channels=8,
        time_len=32,
        temporal_kernel=4,
        temporal_stride=4,
        temporal_filters=4,
        embed_dim=8,
        num_layers=1,
        num_heads=2,
        mlp_ratio=2.0,
    )


# ---------------------------------------------------------------------------
# configs


def test_token_count_shape_arithmetic():
    assert small_encoder().token_count == 16  # (128 - 8) / 8 + 1


def test_embed_dim_head_divisibility_enforced():
    with pytest.raises(ContractError):
        small_encoder(embed_dim=30, num_heads=4)


def test_temporal_kernel_bounded_by_time():
    with pytest.raises(ContractError):
        small_encoder(temporal_kernel=129)


def test_decoder_depths_limited_to_one_or_two():
    with pytest.raises(ContractError):
        DecoderConfig(kind="tb", depth=3)
    assert decoder_config("tb1", 32).depth == 1
    assert decoder_config("tb2", 32).depth == 2
    assert decoder_config("mlp", 32).depth == 128  # hidden width defaults to 4*d


def test_transformer_decoder_needs_divisible_time():
    enc = small_encoder(time_len=130, temporal_kernel=8, temporal_stride=8)
    with pytest.raises(ContractError):
        init_pretrain_model(enc, decoder_config("tb1", enc.embed_dim), seed=0)


def test_bundle_needs_exactly_one_output_module():
    enc = small_encoder()
    with pytest.raises(ContractError):
        ModelBundle(enc, None, False, {})


# ---------------------------------------------------------------------------
# encoder


def test_encoder_output_shape():
    bundle = init_pretrain_model(small_encoder(), decoder_config("tb2", 32), seed=0)
    out = encoder_forward(bundle, np.zeros((5, 16, 128)))
    assert out.shape == (5, 16, 32)


def test_encoder_deterministic_repeat():
    bundle = init_pretrain_model(small_encoder(), decoder_config("tb1", 32), seed=1)
    x = np.random.default_rng(0).normal(size=(2, 16, 128))
    assert np.array_equal(encoder_forward(bundle, x).data, encoder_forward(bundle, x).data)


def test_encoder_zero_input_rows_identical():
    bundle = init_pretrain_model(small_encoder(), decoder_config("mlp", 32), seed=2)
    out = encoder_forward(bundle, np.zeros((4, 16, 128))).data
    for b in range(1, 4):
        assert np.array_equal(out[b], out[0])


def test_encoder_rejects_wrong_dims():
    bundle = init_pretrain_model(small_encoder(), decoder_config("tb1", 32), seed=0)
    with pytest.raises(ShapeError):
        encoder_forward(bundle, np.zeros((2, 16, 64)))


# ---------------------------------------------------------------------------
# decoders and head


@pytest.mark.parametrize("name", ["mlp", "tb1", "tb2"])
def test_decoder_reconstruction_shape(name):
    bundle = init_pretrain_model(small_encoder(), decoder_config(name, 32), seed=3)
    latents = encoder_forward(bundle, np.zeros((3, 16, 128)))
    out = decoder_forward(bundle, latents)
    assert out.shape == (3, 16, 128)


def test_decoder_deterministic_repeat():
    bundle = init_pretrain_model(small_encoder(), decoder_config("tb2", 32), seed=4)
    x = np.random.default_rng(1).normal(size=(2, 16, 128))
    assert np.array_equal(pretrain_forward(bundle, x).data, pretrain_forward(bundle, x).data)


def test_decoder_forward_requires_pretrain_mode():
    bundle = init_scratch_model(small_encoder(), seed=0)
    latents = encoder_forward(bundle, np.zeros((1, 16, 128)))
    with pytest.raises(ModeError):
        decoder_forward(bundle, latents)


def test_head_output_shape_and_mode():
    scratch = init_scratch_model(small_encoder(), seed=5)
    out = finetune_forward(scratch, np.random.default_rng(2).normal(size=(6, 16, 128)))
    assert out.shape == (6, 2)
    pre = init_pretrain_model(small_encoder(), decoder_config("tb1", 32), seed=5)
    with pytest.raises(ModeError):
        head_forward(pre, encoder_forward(pre, np.zeros((1, 16, 128))))


def test_head_zero_latents_gives_bias_rows():
    bundle = init_scratch_model(small_encoder(), seed=6)
    out = head_forward(bundle, Tensor(np.zeros((4, 16, 32))))
    bias = bundle.params["head.b"].data
    for b in range(4):
        assert np.array_equal(out.data[b], bias)


def test_head_gradcheck_through_rmse_style_loss():
    bundle = init_scratch_model(tiny_encoder(), seed=7)
    x = np.random.default_rng(3).normal(size=(2, 8, 32))
    y = np.random.default_rng(4).normal(size=(2, 2))

    def loss_fn():
        return mean_squared_distance(finetune_forward(bundle, x), y)

    head_params = [bundle.params["head.w"], bundle.params["head.b"]]
    assert max_relative_gradient_error(loss_fn, head_params) <= 1e-4


# ---------------------------------------------------------------------------
# to_finetune


def test_to_finetune_retains_encoder_bitwise_and_drops_decoder():
    bundle = init_pretrain_model(small_encoder(), decoder_config("tb2", 32), seed=8)
    before = {n: p.data.copy() for n, p in bundle.params.items() if n.startswith("enc.")}
    tuned = to_finetune(bundle, head_seed=1)
    assert all(not n.startswith("dec.") for n in tuned.params)
    assert "head.w" in tuned.params and "head.b" in tuned.params
    for name, value in before.items():
        assert np.array_equal(tuned.params[name].data, value)
        assert tuned.params[name] is bundle.params[name]  # same tensors, still trainable
    out = finetune_forward(tuned, np.zeros((2, 16, 128)))
    assert out.shape == (2, 2)


def test_to_finetune_requires_decoder():
    with pytest.raises(ModeError):
        to_finetune(init_scratch_model(small_encoder(), seed=0))


# ---------------------------------------------------------------------------
# parameter counts (golden values guard architecture drift)


@pytest.mark.parametrize(
    "decoder,expected",
    [("mlp", 348016), ("tb1", 30992), ("tb2", 39536)],
)
def test_parameter_count_goldens(decoder, expected):
    bundle = init_pretrain_model(small_encoder(), decoder_config(decoder, 32), seed=0)
    assert bundle.parameter_count() == expected


def test_scratch_parameter_count_golden():
    assert init_scratch_model(small_encoder(), seed=0).parameter_count() == 18226


def test_parameter_count_pure_function_of_config():
    a = init_pretrain_model(small_encoder(), decoder_config("tb1", 32), seed=0)
    b = init_pretrain_model(small_encoder(), decoder_config("tb1", 32), seed=999)
    assert a.parameter_count() == b.parameter_count()
    assert list(a.params) == list(b.params)


# ---------------------------------------------------------------------------
# full pretrain gradient check, all decoder kinds


@pytest.mark.parametrize("name", ["mlp", "tb1", "tb2"])
def test_full_pretrain_gradcheck(name):
    enc = tiny_encoder()
    bundle = init_pretrain_model(enc, decoder_config(name, enc.embed_dim), seed=9)
    x = np.random.default_rng(5).normal(size=(2, 8, 32))
    mask = generate_mask(MaskSpec(8, 32, 0.5, rng_seed=11))

    def loss_fn():
        recon = pretrain_forward(bundle, apply_mask(Tensor(x), mask))
        return similarity_loss(recon, Tensor(x), mask).node

    err = max_relative_gradient_error(loss_fn, list(bundle.params.values()))
    assert err <= 1e-4, f"{name}: rel err {err}"


# ---------------------------------------------------------------------------
# checkpoints


def make_bundle(seed=0, decoder="tb2", ratio=0.4):
    return init_pretrain_model(
        small_encoder(), decoder_config(decoder, 32), seed=seed, mask_ratio=ratio
    )


def test_checkpoint_save_load_save_byte_identical(tmp_path):
    bundle = make_bundle()
    p1, p2 = tmp_path / "a.emae", tmp_path / "b.emae"
    save_checkpoint(bundle, p1)
    save_checkpoint(load_checkpoint(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_restores_recorded_forward_exactly(tmp_path):
    bundle = make_bundle(seed=13)
    x = np.random.default_rng(6).normal(size=(2, 16, 128))
    recorded = pretrain_forward(bundle, x).data.copy()
    path = tmp_path / "m.emae"
    save_checkpoint(bundle, path)
    restored = load_checkpoint(path)
    assert np.array_equal(pretrain_forward(restored, x).data, recorded)
    assert restored.pretrain_ratio == 0.4


def test_checkpoint_wrong_magic_rejected(tmp_path):
    path = tmp_path / "m.emae"
    save_checkpoint(make_bundle(), path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointFormatError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_truncation_rejected_with_offset(tmp_path):
    path = tmp_path / "m.emae"
    save_checkpoint(make_bundle(), path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointFormatError, match="byte offset"):
        load_checkpoint(path)


def test_checkpoint_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "m.emae"
    save_checkpoint(make_bundle(), path)
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(CheckpointFormatError, match="trailing"):
        load_checkpoint(path)


def test_finetuned_checkpoint_round_trips(tmp_path):
    tuned = to_finetune(make_bundle(seed=21), head_seed=2)
    path = tmp_path / "tuned.emae"
    save_checkpoint(tuned, path)
    restored = load_checkpoint(path)
    assert restored.mode == "finetune"
    x = np.random.default_rng(7).normal(size=(3, 16, 128))
    assert np.array_equal(
        finetune_forward(restored, x).data, finetune_forward(tuned, x).data
    )


# ---------------------------------------------------------------------------
# external weight import


def test_import_empty_map_changes_nothing(tmp_path):
    target = make_bundle(seed=1)
    donor = make_bundle(seed=2)
    path = tmp_path / "donor.emae"
    save_checkpoint(donor, path)
    before = {n: p.data.copy() for n, p in target.params.items()}
    report = import_external_weights(target, path, {})
    assert report.matched == []
    assert sorted(report.unmatched_internal) == sorted(before)
    for name, value in before.items():
        assert np.array_equal(target.params[name].data, value)


def test_self_import_identity_map_bitwise(tmp_path):
    bundle = make_bundle(seed=3)
    path = tmp_path / "self.emae"
    save_checkpoint(bundle, path)
    before = {n: p.data.copy() for n, p in bundle.params.items()}
    report = import_external_weights(bundle, path, {n: n for n in bundle.params})
    assert len(report.matched) == len(before)
    assert report.unmatched_internal == []
    for name, value in before.items():
        assert np.array_equal(bundle.params[name].data, value)


def test_partial_import_changes_exactly_mapped_tensors(tmp_path):
    target = make_bundle(seed=4)
    donor = make_bundle(seed=5)
    path = tmp_path / "donor.emae"
    save_checkpoint(donor, path)
    mapped = [n for n in target.params if n.startswith("enc.block0.attn.w")]
    before = {n: p.data.copy() for n, p in target.params.items()}
    report = import_external_weights(target, path, {n: n for n in mapped})
    assert sorted(n for _, n in report.matched) == sorted(mapped)
    for name in target.params:
        if name in mapped:
            assert np.array_equal(target.params[name].data, donor.params[name].data)
            assert not np.array_equal(target.params[name].data, before[name])
        else:
            assert np.array_equal(target.params[name].data, before[name])


def test_import_shape_conflict_names_both_shapes(tmp_path):
    target = make_bundle(seed=6)
    donor = make_bundle(seed=7)
    path = tmp_path / "donor.emae"
    save_checkpoint(donor, path)
    with pytest.raises(WeightImportError, match=r"\(32, 32\).*\(32, 64\)|\(32, 64\).*\(32, 32\)"):
        import_external_weights(target, path, {"enc.block0.attn.wq": "enc.block0.mlp.w1"})


def test_import_reports_missing_external_names(tmp_path):
    target = make_bundle(seed=8)
    path = tmp_path / "donor.emae"
    save_checkpoint(make_bundle(seed=9), path)
    report = import_external_weights(target, path, {"does.not.exist": "enc.pos"})
    assert report.missing_external == ["does.not.exist"]
    assert report.matched == []
