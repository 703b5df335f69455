"""Linear probe over fused features, with the cross-entropy objective.

The probe is the only trainable stage besides the fusion head: an affine
map from the fused feature to class logits, optionally preceded by a
hidden linear layer + ReLU (the classifier-head variant paired with the
``*_relu`` pooling kinds). Loss is unweighted cross-entropy; no class
rebalancing.
"""

import numpy as np

from . import autodiff as ad
from .heads import RELU_PROBE_KINDS, _kaiming


class ProbeModel:
    """Affine classifier head: feature [D] -> logits [C].

    Weight init is uniform Kaiming-style fan-in scaling from the config
    seed; biases start at zero.
    """

    def __init__(self, feature_dim, class_count, relu_variant=False, seed=0, dtype=np.float32):
        self.feature_dim = feature_dim
        self.class_count = class_count
        self.relu_variant = bool(relu_variant)
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.params = {}
        self.no_decay = set()
        if self.relu_variant:
            self._add("hidden.weight", _kaiming(rng, (feature_dim, feature_dim), feature_dim))
            self._add("hidden.bias", np.zeros(feature_dim), decay=False)
        self._add("weight", _kaiming(rng, (feature_dim, class_count), feature_dim))
        self._add("bias", np.zeros(class_count), decay=False)

    def _add(self, name, array, decay=True):
        self.params[name] = ad.Tensor(
            np.asarray(array, dtype=self.dtype), requires_grad=True, dtype=self.dtype
        )
        if not decay:
            self.no_decay.add(name)

    def logits(self, feature):
        """feature: Tensor [D] -> Tensor [C]."""
        if feature.shape != (self.feature_dim,):
            raise ad.ShapeError(
                f"probe expects feature [{self.feature_dim}], got {feature.shape}"
            )
        x = ad.reshape(feature, (1, self.feature_dim))
        if self.relu_variant:
            x = ad.relu(ad.add(ad.matmul(x, self.params["hidden.weight"]), self.params["hidden.bias"]))
        out = ad.add(ad.matmul(x, self.params["weight"]), self.params["bias"])
        return ad.reshape(out, (self.class_count,))


def cross_entropy(logits, class_id):
    """-log softmax(logits)[class_id], stabilized by max subtraction."""
    c = logits.shape[0]
    if not 0 <= class_id < c:
        raise IndexError(f"class_id {class_id} out of range for {c} classes")
    ls = ad.log_softmax(ad.reshape(logits, (1, c)), axis=-1)
    onehot = np.zeros((1, c), dtype=logits.dtype)
    onehot[0, class_id] = 1.0
    picked = ad.tsum(ad.mul(ls, ad.Tensor(onehot, dtype=logits.dtype)), axis=1)
    return ad.scale(ad.reshape(picked, ()), -1.0)


def build_probe(head_cfg, class_count, dtype=np.float32, seed=None):
    """Probe matching a fusion head config; the ``*_relu`` pooling kinds
    get the hidden ReLU layer."""
    return ProbeModel(
        feature_dim=head_cfg.out_dim,
        class_count=class_count,
        relu_variant=head_cfg.kind in RELU_PROBE_KINDS,
        seed=head_cfg.seed if seed is None else seed,
        dtype=dtype,
    )
