"""Masked-autoencoder pre-training and fine-tuning for multichannel signals."""

from .data import SignalDataset, SynthConfig, load_dataset, save_dataset, synth_generate
from .losses import LossKind, LossValue, mse_loss, rmse_mm, similarity_loss
from .masking import Mask, MaskSpec, apply_mask, apply_reversed_mask, flat_to_2d, generate_mask
from .model import (
    DecoderConfig,
    EncoderConfig,
    ModelBundle,
    decoder_forward,
    encoder_forward,
    head_forward,
    import_external_weights,
    init_pretrain_model,
    init_scratch_model,
    load_checkpoint,
    save_checkpoint,
    to_finetune,
)
from .tensor import Tensor, backward, no_grad
from .training import (
    AdamState,
    RunLog,
    TrainConfig,
    adam_step,
    evaluate,
    finetune,
    lr_at_epoch,
    pretrain,
    split_dataset,
)

__version__ = "0.1.0"
