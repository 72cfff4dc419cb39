"""Native classifiers: softmax/MLP trained by gradient descent, and random forests."""

from poisonbench.learners.augment import augment_batch, augment_image, crop_from_padded, hflip
from poisonbench.learners.config import TrainingConfig
from poisonbench.learners.forest import best_split, build_tree, gini, train_random_forest
from poisonbench.learners.models import (
    EnsembleModel,
    ForestModel,
    NeuralModel,
    Tree,
    load_model,
    model_from_dict,
    model_to_dict,
    predict,
    predict_proba,
    save_model,
)
from poisonbench.learners.neural import (
    TrainingTrace,
    cross_entropy,
    detect_overfit_epoch,
    init_model,
    loss_and_grads,
    train_classifier,
)


def fit(ds, config: TrainingConfig, n_classes: int | None = None):
    """Train whichever learner ``config.kind`` names; forests return an empty trace."""
    if config.kind == "random_forest":
        return train_random_forest(ds, config=config, n_classes=n_classes or ds.n_classes), TrainingTrace()
    return train_classifier(ds, config, n_classes)


def example_losses(model, ds) -> "np.ndarray":
    """Per-example cross-entropy of ``model`` on ``ds``."""
    import numpy as np

    p = predict_proba(model, ds.flat_features())
    return -np.log(np.clip(p[np.arange(len(ds)), ds.labels], 1e-300, None))
