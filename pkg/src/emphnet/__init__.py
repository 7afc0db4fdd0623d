"""Self-emphasizing attention network for continuous gesture recognition.

The package is self-contained: tensors, reverse-mode differentiation,
convolutions, the attention modules, CTC alignment, a synthetic clip
corpus, and the training harness are all implemented here on top of numpy.
"""

from .attention import (SSEMConfig, TSEMConfig, emphasize_residual, multi_scale_aggregate,
                        ssem_forward, ssem_init, temporal_difference, tsem_forward, tsem_init)
from .config import (RunConfig, apply_variant, build_corpus, build_model, config_hash,
                     parse_config, parse_config_file, serialize_config)
from .ctc import (collapse_path, ctc_brute_force_oracle, ctc_loss, edit_alignment,
                  greedy_decode, wer)
from .flops import FlopsReport, branch_sweep, count_model
from .gradcheck import finite_diff_check, run_gradcheck
from .network import Model, ModelConfig, full_scale_model, model_forward
from .synth import AugmentConfig, DataConfig, augment, center_crop, generate_dataset
from .tensor import GradTape, Tensor, backward, no_grad
from .train import TrainConfig, evaluate, train_run

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "DataConfig", "FlopsReport", "GradTape", "Model", "ModelConfig",
    "RunConfig", "SSEMConfig", "TSEMConfig", "Tensor", "TrainConfig", "apply_variant",
    "augment", "backward", "branch_sweep", "build_corpus", "build_model",
    "center_crop", "collapse_path", "config_hash", "count_model",
    "ctc_brute_force_oracle", "ctc_loss", "edit_alignment", "emphasize_residual",
    "evaluate", "finite_diff_check", "full_scale_model", "generate_dataset",
    "greedy_decode", "model_forward", "multi_scale_aggregate", "no_grad",
    "parse_config", "parse_config_file", "run_gradcheck", "serialize_config",
    "ssem_forward", "ssem_init", "temporal_difference", "train_run", "tsem_forward",
    "tsem_init", "wer",
]
