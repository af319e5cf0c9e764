"""The four mask-estimation architectures and their training losses.

``VL2M``           landmark features -> BLSTM stack -> binary-mask head [0, 1]
``VL2M_REF``       VL2M mask and noisy spectrogram through separate BLSTMs,
                   linearly fused, then a BLSTM with an amplitude-mask head [0, 10]
``AV_CONCAT``      [features, spectrogram] -> BLSTM stack -> amplitude-mask head
``AV_CONCAT_REF``  [VL2M-masked spectrogram, spectrogram] -> BLSTM stack -> head
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from avmask.nn import layers as L

VL2M = "VL2M"
VL2M_REF = "VL2M_REF"
AV_CONCAT = "AV_CONCAT"
AV_CONCAT_REF = "AV_CONCAT_REF"
KINDS = (VL2M, VL2M_REF, AV_CONCAT, AV_CONCAT_REF)
REFINE_KINDS = (VL2M_REF, AV_CONCAT_REF)

TBM_SCALE = 1.0
IAM_SCALE = 10.0
BCE_CLAMP = 1e-7
STD_FLOOR = 1e-8

# component name -> parameter-name prefixes it owns
COMPONENTS = {
    "vl2m": ("vl2m.", "vl2m_head."),
    "g_m": ("g_m.",),
    "g_y": ("g_y.",),
    "fusion": ("fusion.",),
    "refine": ("refine.", "refine_head."),
    "concat": ("concat.", "concat_head."),
}


@dataclass(frozen=True)
class ModelDims:
    n_visual: int = 136
    n_freq: int = 257
    units: int = 250
    vl2m_layers: int = 5
    concat_layers: int = 3
    refine_layers: int = 1

    @property
    def fusion_dim(self):
        return 2 * self.units


@dataclass
class Sequence:
    """One training/inference example; all grids are (T, ...) arrays.

    ``y`` is the normalized compressed mixture fed to the networks,
    ``y_mag`` the compressed un-normalized mixture used for masking and the
    amplitude loss, ``s`` the compressed clean target and ``m`` the oracle
    binary mask. ``y_mean``/``y_std`` are the statistics that produced ``y``.
    """

    v: np.ndarray
    y: np.ndarray
    y_mag: np.ndarray
    s: np.ndarray = None
    m: np.ndarray = None
    y_mean: np.ndarray = None
    y_std: np.ndarray = None
    name: str = ""

    def __len__(self):
        return self.v.shape[0]


def loss_tbm(m_hat, m):
    """Summed binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    m_hat = np.asarray(m_hat)
    m = np.asarray(m)
    if m_hat.shape != m.shape:
        raise ValueError(f"dimension mismatch: {m_hat.shape} vs {m.shape}")
    q = np.clip(m_hat, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return float(np.sum(-m * np.log(q) - (1.0 - m) * np.log(1.0 - q)))


def loss_tbm_grad(m_hat, m):
    q = np.clip(m_hat, BCE_CLAMP, 1.0 - BCE_CLAMP)
    inside = (m_hat > BCE_CLAMP) & (m_hat < 1.0 - BCE_CLAMP)
    return np.where(inside, -m / q + (1.0 - m) / (1.0 - q), 0.0)


def loss_iam(p_hat, y, s):
    """Summed squared error between the masked mixture and the clean target."""
    p_hat, y, s = np.asarray(p_hat), np.asarray(y), np.asarray(s)
    if not p_hat.shape == y.shape == s.shape:
        raise ValueError(f"dimension mismatch: {p_hat.shape}, {y.shape}, {s.shape}")
    return float(np.sum((p_hat * y - s) ** 2))


def loss_iam_grad(p_hat, y, s):
    return 2.0 * (p_hat * y - s) * y


@dataclass
class ModelGraph:
    kind: str
    dims: ModelDims
    params: dict
    frozen: set = field(default_factory=set)
    use_oracle_mask: bool = False

    @classmethod
    def build(cls, kind, dims=ModelDims(), seed=0):
        if kind not in KINDS:
            raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
        rng = np.random.default_rng(seed)
        p = {}
        u = dims.units
        if kind in (VL2M, VL2M_REF, AV_CONCAT_REF):
            L.init_blstm_stack(p, "vl2m", dims.n_visual, u, dims.vl2m_layers, rng)
            L.init_dense(p, "vl2m_head", 2 * u, dims.n_freq, rng)
        if kind == VL2M_REF:
            z = dims.fusion_dim
            L.init_blstm_stack(p, "g_m", dims.n_freq, u, dims.refine_layers, rng)
            L.init_blstm_stack(p, "g_y", dims.n_freq, u, dims.refine_layers, rng)
            lim = np.sqrt(3.0 / z)
            p["fusion.W_hm"] = rng.uniform(-lim, lim, size=(2 * u, z))
            p["fusion.W_hy"] = rng.uniform(-lim, lim, size=(2 * u, z))
            p["fusion.b_h"] = np.zeros(z)
            L.init_blstm_stack(p, "refine", z, u, dims.refine_layers, rng)
            L.init_dense(p, "refine_head", 2 * u, dims.n_freq, rng)
        if kind == AV_CONCAT:
            L.init_blstm_stack(p, "concat", dims.n_visual + dims.n_freq, u, dims.concat_layers, rng)
            L.init_dense(p, "concat_head", 2 * u, dims.n_freq, rng)
        if kind == AV_CONCAT_REF:
            L.init_blstm_stack(p, "concat", 2 * dims.n_freq, u, dims.concat_layers, rng)
            L.init_dense(p, "concat_head", 2 * u, dims.n_freq, rng)
        return cls(kind, dims, p)

    # -- parameter bookkeeping -------------------------------------------

    def components(self):
        return [c for c, prefixes in COMPONENTS.items()
                if any(k.startswith(prefixes) for k in self.params)]

    def component_of(self, name):
        for comp, prefixes in COMPONENTS.items():
            if name.startswith(prefixes):
                return comp
        raise KeyError(name)

    def freeze(self, component):
        if component not in self.components():
            raise ValueError(f"{self.kind} has no component {component!r}")
        self.frozen.add(component)

    def unfreeze(self, component):
        self.frozen.discard(component)

    def is_trainable(self, name):
        return self.component_of(name) not in self.frozen

    def copy(self):
        return ModelGraph(
            self.kind,
            self.dims,
            {k: v.copy() for k, v in self.params.items()},
            set(self.frozen),
            self.use_oracle_mask,
        )

    def load_component(self, other, component="vl2m"):
        """Copy one component's parameters from ``other`` (shapes must match)."""
        prefixes = COMPONENTS[component]
        names = [k for k in self.params if k.startswith(prefixes)]
        for k in names:
            if k not in other.params or other.params[k].shape != self.params[k].shape:
                raise ValueError(f"incompatible parameter {k} in source model")
            self.params[k] = other.params[k].copy()

    @property
    def output_scale(self):
        return TBM_SCALE if self.kind == VL2M else IAM_SCALE

    @property
    def loss_kind(self):
        return "tbm" if self.kind == VL2M else "iam"

    # -- forward / backward ------------------------------------------------

    def _check(self, batch):
        d = self.dims
        for name, arr, width in (("v", batch["v"], d.n_visual), ("y", batch["y"], d.n_freq)):
            if arr.shape[-1] != width:
                raise ValueError(f"input {name} has {arr.shape[-1]} features, expected {width}")
        if batch["v"].shape[:2] != batch["y"].shape[:2]:
            raise ValueError("features and spectrogram are not time-aligned")

    def _mask_input(self, batch, caches):
        """Binary-mask estimate feeding the refinement models (oracle in pretraining)."""
        if self.use_oracle_mask:
            if batch.get("m") is None:
                raise ValueError("oracle-mask mode requires the oracle mask m")
            caches["oracle"] = True
            return batch["m"]
        hv, caches["vl2m"] = L.blstm_stack_forward(self.params, "vl2m", batch["v"])
        m_hat, caches["vl2m_head"] = L.bounded_head_forward(
            self.params, "vl2m_head", hv, TBM_SCALE
        )
        return m_hat

    def forward(self, batch):
        """Return (output, caches) for a stacked batch dict of (B, T, .) arrays."""
        self._check(batch)
        p = self.params
        caches = {}
        if self.kind == VL2M:
            hv, caches["vl2m"] = L.blstm_stack_forward(p, "vl2m", batch["v"])
            out, caches["vl2m_head"] = L.bounded_head_forward(p, "vl2m_head", hv, TBM_SCALE)
            return out, caches
        if self.kind == AV_CONCAT:
            x = np.concatenate([batch["v"], batch["y"]], axis=2)
            hx, caches["concat"] = L.blstm_stack_forward(p, "concat", x)
            out, caches["concat_head"] = L.bounded_head_forward(p, "concat_head", hx, IAM_SCALE)
            return out, caches
        m_hat = self._mask_input(batch, caches)
        caches["m_hat"] = m_hat
        if self.kind == VL2M_REF:
            r_m, caches["g_m"] = L.blstm_stack_forward(p, "g_m", m_hat)
            r_y, caches["g_y"] = L.blstm_stack_forward(p, "g_y", batch["y"])
            h = r_m @ p["fusion.W_hm"] + r_y @ p["fusion.W_hy"] + p["fusion.b_h"]
            caches["fusion"] = (r_m, r_y)
            hr, caches["refine"] = L.blstm_stack_forward(p, "refine", h)
            out, caches["refine_head"] = L.bounded_head_forward(p, "refine_head", hr, IAM_SCALE)
            return out, caches
        # AV_CONCAT_REF: masked mixture, re-normalized with the input statistics
        inv_std = 1.0 / np.maximum(batch["y_std"], STD_FLOOR)
        s_m = (m_hat * batch["y_mag"] - batch["y_mean"]) * inv_std
        caches["s_m_scale"] = batch["y_mag"] * inv_std
        x = np.concatenate([s_m, batch["y"]], axis=2)
        hx, caches["concat"] = L.blstm_stack_forward(p, "concat", x)
        out, caches["concat_head"] = L.bounded_head_forward(p, "concat_head", hx, IAM_SCALE)
        return out, caches

    def _vl2m_backward(self, caches, d_mask, grads):
        if caches.get("oracle") or "vl2m" in self.frozen:
            return
        p = self.params
        d = L.bounded_head_backward(p, "vl2m_head", caches["vl2m_head"], d_mask, grads)
        L.blstm_stack_backward(p, "vl2m", caches["vl2m"], d, grads)

    def backward(self, caches, d_out):
        """Gradients of all parameters given dLoss/dOutput; frozen blocks get zeros."""
        p = self.params
        grads = {}
        if self.kind == VL2M:
            self._vl2m_backward(caches, d_out, grads)
        elif self.kind == AV_CONCAT:
            if "concat" not in self.frozen:
                d = L.bounded_head_backward(p, "concat_head", caches["concat_head"], d_out, grads)
                L.blstm_stack_backward(p, "concat", caches["concat"], d, grads)
        elif self.kind == VL2M_REF:
            upstream = not (caches.get("oracle") or "vl2m" in self.frozen)
            d = L.bounded_head_backward(p, "refine_head", caches["refine_head"], d_out, grads)
            d_h = L.blstm_stack_backward(p, "refine", caches["refine"], d, grads)
            r_m, r_y = caches["fusion"]
            grads["fusion.W_hm"] = r_m.reshape(-1, r_m.shape[-1]).T @ d_h.reshape(-1, d_h.shape[-1])
            grads["fusion.W_hy"] = r_y.reshape(-1, r_y.shape[-1]).T @ d_h.reshape(-1, d_h.shape[-1])
            grads["fusion.b_h"] = d_h.reshape(-1, d_h.shape[-1]).sum(axis=0)
            d_rm = d_h @ p["fusion.W_hm"].T
            d_ry = d_h @ p["fusion.W_hy"].T
            d_mask = L.blstm_stack_backward(p, "g_m", caches["g_m"], d_rm, grads)
            L.blstm_stack_backward(p, "g_y", caches["g_y"], d_ry, grads)
            if upstream:
                self._vl2m_backward(caches, d_mask, grads)
        else:
            d = L.bounded_head_backward(p, "concat_head", caches["concat_head"], d_out, grads)
            dx = L.blstm_stack_backward(p, "concat", caches["concat"], d, grads)
            n_freq = self.dims.n_freq
            d_mask = dx[:, :, :n_freq] * caches["s_m_scale"]
            self._vl2m_backward(caches, d_mask, grads)
        out = {}
        for name, value in p.items():
            g = grads.get(name)
            if g is None or not self.is_trainable(name):
                g = np.zeros_like(value)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name}")
            out[name] = g
        return out

    # -- losses over sequences ---------------------------------------------

    def _loss_and_dout(self, out, batch):
        if self.kind == VL2M:
            return loss_tbm(out, batch["m"]), loss_tbm_grad(out, batch["m"])
        return (
            loss_iam(out, batch["y_mag"], batch["s"]),
            loss_iam_grad(out, batch["y_mag"], batch["s"]),
        )

    def loss(self, sequences):
        total = 0.0
        for batch in stack_groups(sequences):
            out, _ = self.forward(batch)
            total += self._loss_and_dout(out, batch)[0]
        return total

    def loss_and_grads(self, sequences):
        """Summed loss and gradients over ``sequences`` (grouped by length, unpadded)."""
        total = 0.0
        grads = None
        for batch in stack_groups(sequences):
            out, caches = self.forward(batch)
            value, d_out = self._loss_and_dout(out, batch)
            g = self.backward(caches, d_out)
            total += value
            if grads is None:
                grads = g
            else:
                for k in grads:
                    grads[k] += g[k]
        return total, grads

    def predict(self, seq):
        """Mask estimate (T, d) for a single sequence."""
        out, _ = self.forward(stack_groups([seq])[0])
        return out[0]

    def dims_dict(self):
        return asdict(self.dims)


_FIELDS = ("v", "y", "y_mag", "s", "m", "y_mean", "y_std")


def stack_groups(sequences):
    """Group equal-length sequences into stacked batches, in first-seen order."""
    groups = {}
    for seq in sequences:
        groups.setdefault(len(seq), []).append(seq)
    batches = []
    for members in groups.values():
        batch = {}
        for f in _FIELDS:
            vals = [getattr(s, f) for s in members]
            if any(v is None for v in vals):
                batch[f] = None
            elif f in ("y_mean", "y_std"):
                batch[f] = np.stack(vals)[:, None, :]
            else:
                batch[f] = np.stack(vals)
        batches.append(batch)
    return batches
