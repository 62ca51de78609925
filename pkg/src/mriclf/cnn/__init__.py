from .layers import bce_loss, conv3d, conv3d_backward, dropout, softmax
from .model import ArchDescriptor, CnnModel, build_model, forward, load_cnn, predict, save_cnn
from .saliency import SaliencyMap, guided_backprop_saliency
from .train import EarlyStopping, TrainConfig, adam_step, lr_for_epoch, train, write_training_log

__all__ = [
    "ArchDescriptor", "CnnModel", "EarlyStopping", "SaliencyMap", "TrainConfig", "adam_step", "bce_loss",
    "build_model", "conv3d", "conv3d_backward", "dropout", "forward", "guided_backprop_saliency", "load_cnn",
    "lr_for_epoch", "predict", "save_cnn", "softmax", "train", "write_training_log",
]
