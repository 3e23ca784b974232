"""Multilingual authorship representations with content masking and language-aware batching."""

from .corpus import AuthorRecord, Corpus, SplitCorpus, load_corpus, split_corpus
from .eval import EvalReport, attribution_metrics, auroc, linear_probe, make_eval_pairs, random_order_baseline
from .lab import BatchPlan, negative_composition, plan_epoch
from .model import ModelParams, encode_document, init_params
from .objective import param_gradients, supcon_loss_and_grad
from .optim import AdamHyper, OptState, WsdSchedule, adamw_step, wsd_lr
from .pcm import MaskConfig, mask_sequence
from .tokenizer import FunctionPolicy, TokenSeq, Tokenizer, Vocab, fit_tokenizer
from .trainer import TrainConfig, train_run

__version__ = "0.1.0"

__all__ = [
    "AuthorRecord", "Corpus", "SplitCorpus", "load_corpus", "split_corpus",
    "EvalReport", "attribution_metrics", "auroc", "linear_probe", "make_eval_pairs", "random_order_baseline",
    "BatchPlan", "negative_composition", "plan_epoch",
    "ModelParams", "encode_document", "init_params",
    "param_gradients", "supcon_loss_and_grad",
    "AdamHyper", "OptState", "WsdSchedule", "adamw_step", "wsd_lr",
    "MaskConfig", "mask_sequence",
    "FunctionPolicy", "TokenSeq", "Tokenizer", "Vocab", "fit_tokenizer",
    "TrainConfig", "train_run",
]
