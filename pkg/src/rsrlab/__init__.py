"""Robust super-resolution lab: PGD adversarial examples as training inputs for an SR GAN."""

from .attack import AttackConfig, attack_loss, init_structured_noise, pgd_attack, project
from .dataio import (CorruptionSpec, PatchPair, bicubic_downsample, crop_patches, degrade, load_image,
                     make_pair, save_image)
from .errors import ConfigError, DimensionError, FormatError, NumericalError, ParseError, RSRError
from .losses import LossWeights, gan_loss_d, gan_loss_g, l1_loss, perceptual_loss, total_g_loss
from .metrics import MetricReport, evaluate, perceptual_distance, psnr, ssim
from .model import (GeneratorConfig, ModelBundle, discriminator_forward, features, generator_forward,
                    init_models)
from .train import (TrainConfig, TrainState, adam_step, load_checkpoint, new_train_state, pretrain_clean,
                    robust_train, save_checkpoint)

__version__ = "0.1.0"
