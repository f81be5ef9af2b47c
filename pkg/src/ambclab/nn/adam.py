"""Adam optimizer over the trainable layers of a model."""
import numpy as np


class Adam:
    """Standard Adam with bias correction, updating parameters in place.

    Only layers that are trainable at construction time are registered, so
    frozen layers are never touched (neither parameters nor moments).
    """

    def __init__(self, layers, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._slots = []
        for layer in layers:
            if not layer.trainable:
                continue
            for name, p in layer.params().items():
                self._slots.append((layer, name, np.zeros_like(p), np.zeros_like(p)))

    def step(self):
        """Apply one update using each registered parameter's current gradient."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for layer, name, m, v in self._slots:
            if not layer.trainable:
                continue
            g = layer.grads()[name]
            if g is None:
                raise RuntimeError(f"parameter {name!r} has no gradient; run backward first")
            p = layer.params()[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
