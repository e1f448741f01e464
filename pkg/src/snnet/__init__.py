"""Training and evaluation stack for binary classification of sparse
four-band supernova light-curves (Ia vs. not-Ia): a from-scratch autodiff
core, a 1D-inception CNN, a Siamese triplet-loss network, a synthetic
light-curve generator, and a k-fold evaluation harness."""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, backward
from .lightcurves import (
    EncodedSample,
    GeneratorConfig,
    LightCurve,
    Observation,
    encode,
    kfold_split,
    load_jsonl,
    save_jsonl,
    synth_generate,
)
from .losses import MarginConfig, TripletBatch, cross_entropy, mine_batch_all, triplet_loss
from .metrics import accuracy, confusion_at, evaluate_fold, roc_and_auc
from .network import (
    Network,
    NetworkConfig,
    build_network,
    default_network_config,
    load_checkpoint,
    plan_network,
    save_checkpoint,
)
from .optim import Adam, TrainPlan, default_cnn_plan, default_siamese_plan, lr_at, xavier_uniform
from .training import train_cnn, train_head, train_siamese
