"""Adversarial robustness workbench for compact audio deepfake detectors.

Pipeline: synthetic 16 kHz corpus -> LFCC/MFCC front-ends with exact
waveform gradients -> compact spectral and raw-waveform detectors ->
FGSM / PGD-L2 / FAB attacks (white-box and transfer) -> EER / MCD metrics
-> loss-adaptive adversarial fine-tuning.
"""

from .adaptive import (AdaptiveConfig, adaptive_update, adv_finetune, epoch_score,
                       sample_index, select_epoch, uniform_sampling_vector)
from .attacks import (AttackOutcome, AttackSpec, attack_dataset, fab_binary, fgsm,
                      paper_attack_grid, pgd_l2, strongest_roster)
from .audio_io import (ManifestRecord, SynthSpec, Waveform, balance_oversample,
                       load_wav, read_manifest, resample, save_wav,
                       standardize_duration, synthesize_dataset)
from .features import CepstralFrontEnd, FeatureMatrix, lfcc, mfcc
from .metrics import accuracy, compute_eer, compute_mcd
from .models import (Checkpoint, Detector, RawNetLite, SpecNetLite, bce_loss,
                     build_detector, load_checkpoint, save_checkpoint)
from .training import TrainConfig, TrainResult, train

__version__ = "0.1.0"
