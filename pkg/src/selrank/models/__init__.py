"""Rankers: CNN (+ logistic regression) and BiGRU attention models."""
from .cnn import CnnConfig, cnn_forward, cnn_logit, image_ids, init_cnn_params
from .lr import LrModel, lr_predict, lr_train
from .rankers import (
    ATTENTION_KINDS,
    CNN_KINDS,
    MODEL_KINDS,
    AttentionRanker,
    CnnRanker,
    Prediction,
    Ranker,
    TrainConfig,
    attention_batch_loss,
    cnn_batch_loss,
    load_model,
    predict_run,
    rank_order,
    save_model,
    train_attention,
    train_cnn,
    train_model,
)
from .rnn import GruConfig, ap_attention, ap_score, encode, hinge_loss, init_gru_params, oneway_score

__all__ = [
    "ATTENTION_KINDS",
    "CNN_KINDS",
    "MODEL_KINDS",
    "AttentionRanker",
    "CnnConfig",
    "CnnRanker",
    "GruConfig",
    "LrModel",
    "Prediction",
    "Ranker",
    "TrainConfig",
    "ap_attention",
    "ap_score",
    "attention_batch_loss",
    "cnn_batch_loss",
    "cnn_forward",
    "cnn_logit",
    "encode",
    "hinge_loss",
    "image_ids",
    "init_cnn_params",
    "init_gru_params",
    "load_model",
    "lr_predict",
    "lr_train",
    "oneway_score",
    "predict_run",
    "rank_order",
    "save_model",
    "train_attention",
    "train_cnn",
    "train_model",
]
