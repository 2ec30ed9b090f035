"""DSC-U / DSC-O / ODSC networks: spec, construction, forward and backward.

Layer order inside one block:

* undercomplete encoder: conv -> relu -> 2x2 max-pool (ceil mode)
* overcomplete encoder:  conv -> relu -> 2x bilinear upsample
* decoder: bilinear resize to the mirrored encoder size -> conv -> relu
  (the last decoder conv is linear and emits one channel)

The overcomplete latent is reduced onto the undercomplete latent grid by
adaptive max-pooling and then fused (channel concat or elementwise add).
Rows of ``Z`` are the vectorised fused maps, one per sample.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import layers as L
from .errors import ConfigError, ShapeError
from .rng import Rng

BRANCHES = ("encoder-U", "encoder-O", "decoder")
RESAMPLE = {"encoder-U": "pool", "encoder-O": "upsample", "decoder": "upsample"}
VARIANTS = ("dsc-u", "dsc-o", "odsc")
C_INIT = 1e-4


@dataclass(frozen=True)
class LayerSpec:
    branch: str
    kernel: int
    channels: int
    resample: str = ""

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise ConfigError(f"unknown branch {self.branch!r}")
        if not self.resample:
            object.__setattr__(self, "resample", RESAMPLE[self.branch])
        if self.resample != RESAMPLE[self.branch]:
            raise ConfigError(f"{self.branch} layers must use resample={RESAMPLE[self.branch]}, "
                              f"got {self.resample!r}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel size must be a positive odd integer, got {self.kernel}")
        if self.channels < 1:
            raise ConfigError(f"channel count must be positive, got {self.channels}")


@dataclass(frozen=True)
class NetworkSpec:
    input_hw: tuple[int, int]
    under: tuple[LayerSpec, ...]
    over: tuple[LayerSpec, ...]
    decoder: tuple[LayerSpec, ...]
    n_samples: int
    fusion: str = "concat"
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    pretrain_epochs: int = 100
    finetune_epochs: int = 100

    def __post_init__(self):
        object.__setattr__(self, "input_hw", tuple(int(v) for v in self.input_hw))
        for name in ("under", "over", "decoder"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.fusion not in ("concat", "add"):
            raise ConfigError(f"fusion must be 'concat' or 'add', got {self.fusion!r}")
        if not self.under and not self.over:
            raise ConfigError("at least one encoder branch is required")
        if not self.decoder:
            raise ConfigError("decoder needs at least one layer")
        if self.decoder[-1].channels != 1:
            raise ConfigError("the last decoder layer must output 1 channel")
        if self.under and len(self.under) != len(self.decoder):
            raise ConfigError(f"undercomplete encoder has {len(self.under)} layers but decoder "
                              f"has {len(self.decoder)}; sizes are mirrored one to one")
        for name, want in (("under", "encoder-U"), ("over", "encoder-O"), ("decoder", "decoder")):
            for spec in getattr(self, name):
                if spec.branch != want:
                    raise ConfigError(f"{name} list holds a {spec.branch} layer")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be positive")
        if self.fusion == "add" and self.under and self.over and \
                self.under[-1].channels != self.over[-1].channels:
            raise ConfigError(f"add fusion needs equal latent channels, got "
                              f"{self.under[-1].channels} and {self.over[-1].channels}")
        if min(self.input_hw) < 1:
            raise ConfigError(f"bad input size {self.input_hw}")

    @property
    def variant(self) -> str:
        if self.under and self.over:
            return "odsc"
        return "dsc-u" if self.under else "dsc-o"

    def with_variant(self, variant: str) -> "NetworkSpec":
        """Drop one encoder branch; decoder and latent grid stay the same."""
        if variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
        if variant == "odsc":
            if not (self.under and self.over):
                raise ConfigError("odsc needs both encoder branches")
            return self
        if variant == "dsc-u":
            if not self.under:
                raise ConfigError("dsc-u needs an undercomplete branch")
            return replace(self, over=())
        if not self.over:
            raise ConfigError("dsc-o needs an overcomplete branch")
        return replace(self, under=())

    @property
    def sizes(self) -> list[tuple[int, int]]:
        """Undercomplete spatial sizes: input, then after every pool (ceil)."""
        h, w = self.input_hw
        out = [(h, w)]
        for _ in self.decoder:
            h, w = -(-h // 2), -(-w // 2)
            out.append((h, w))
        return out

    @property
    def latent_hw(self) -> tuple[int, int]:
        return self.sizes[-1]

    @property
    def latent_channels(self) -> int:
        cu = self.under[-1].channels if self.under else 0
        co = self.over[-1].channels if self.over else 0
        if self.fusion == "add" or not (cu and co):
            return cu or co
        return cu + co

    @property
    def latent_dim(self) -> int:
        h, w = self.latent_hw
        return self.latent_channels * h * w

    def conv_layers(self) -> list[tuple[str, int, int, int]]:
        """``(name, kernel, cin, cout)`` for every conv, in parameter order."""
        out = []
        for tag, specs in (("U", self.under), ("O", self.over)):
            cin = 1
            for i, s in enumerate(specs, 1):
                out.append((f"enc-{tag}-{i}", s.kernel, cin, s.channels))
                cin = s.channels
        cin = self.latent_channels
        for i, s in enumerate(self.decoder, 1):
            out.append((f"dec-{i}", s.kernel, cin, s.channels))
            cin = s.channels
        return out


def param_count(spec: NetworkSpec) -> dict[str, int]:
    """Per-layer parameter counts plus ``self-expressive`` and ``total``.

    A conv layer holds ``k*k*Cin*Cout`` weights and ``Cout`` biases; the
    self-expressive layer holds ``N*N`` coefficients and no bias.
    """
    counts = {name: k * k * cin * cout + cout for name, k, cin, cout in spec.conv_layers()}
    counts["self-expressive"] = spec.n_samples ** 2
    counts["total"] = sum(counts.values())
    return counts


def receptive_field(i: int, k, mode: str) -> Fraction:
    """Side length of the input region seen by conv layer ``i`` (1-based).

    Each 2x pool doubles the extent, each 2x upsample halves it, so the area
    is ``2**(2(i-1)) k^2`` (undercomplete) or ``(1/2)**(2(i-1)) k^2`` (overcomplete).
    """
    if i < 1:
        raise ValueError("layer index starts at 1")
    if mode == "undercomplete":
        factor = Fraction(2) ** (i - 1)
    elif mode == "overcomplete":
        factor = Fraction(1, 2) ** (i - 1)
    else:
        raise ValueError(f"mode must be 'undercomplete' or 'overcomplete', got {mode!r}")
    return factor * Fraction(k)


@dataclass
class LatentBlock:
    Z: np.ndarray
    hw: tuple[int, int]
    channels: int
    under_channels: int = 0
    over_channels: int = 0


def self_express(Z: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Row ``i`` of the result is ``sum_j C[j, i] * Z[j]`` (i.e. ``C.T @ Z``)."""
    n = Z.shape[0]
    if C.shape != (n, n):
        raise ShapeError(f"C has shape {C.shape}, expected ({n}, {n})")
    return C.T @ Z


def self_express_backward(Z: np.ndarray, C: np.ndarray, grad_out: np.ndarray):
    """Returns ``(dZ, dC)`` for :func:`self_express`."""
    return C @ grad_out, Z @ grad_out.T


@dataclass
class Network:
    spec: NetworkSpec
    params: dict[str, np.ndarray] = field(default_factory=dict)
    chunk: int = 256

    @property
    def C(self) -> np.ndarray:
        return self.params["C"]

    def conv_names(self) -> list[str]:
        return [name for name, *_ in self.spec.conv_layers()]

    def layer_names(self) -> list[str]:
        return self.conv_names()

    # ---------------------------------------------------------------- encoder

    def _encode_chunk(self, x: np.ndarray, keep: bool = True):
        spec = self.spec
        caches: dict[str, list] = {"U": [], "O": []}
        maps: dict[str, np.ndarray] = {}
        lat = {}
        for tag, specs in (("U", spec.under), ("O", spec.over)):
            if not specs:
                continue
            h = x
            for i in range(1, len(specs) + 1):
                name = f"enc-{tag}-{i}"
                h, cc = L.conv2d_forward(h, self.params[name + ".w"], self.params[name + ".b"])
                h, mask = L.relu_forward(h)
                maps[name] = h
                if tag == "U":
                    h, rc = L.maxpool2_forward(h)
                else:
                    h, rc = L.upsample_bilinear2(h)
                if keep:
                    caches[tag].append((cc, mask, rc))
            if tag == "O":
                h, ac = L.adaptive_maxpool_forward(h, *spec.latent_hw)
                if keep:
                    caches["O_pool"] = ac
            lat[tag] = h
        if "U" in lat and "O" in lat:
            fused = np.concatenate([lat["U"], lat["O"]], axis=1) if spec.fusion == "concat" \
                else lat["U"] + lat["O"]
        else:
            fused = lat.get("U", lat.get("O"))
        return fused, caches, maps

    def _encode_backward(self, caches, dfused, grads):
        spec = self.spec
        if spec.under and spec.over:
            if spec.fusion == "concat":
                cu = spec.under[-1].channels
                dlat = {"U": dfused[:, :cu], "O": dfused[:, cu:]}
            else:
                dlat = {"U": dfused, "O": dfused}
        else:
            dlat = {"U" if spec.under else "O": dfused}
        for tag, specs in (("U", spec.under), ("O", spec.over)):
            if not specs:
                continue
            g = dlat[tag]
            if tag == "O":
                g = L.adaptive_maxpool_backward(caches["O_pool"], g)
            for i in range(len(specs), 0, -1):
                cc, mask, rc = caches[tag][i - 1]
                if tag == "U":
                    g = L.maxpool2_backward(rc, g)
                else:
                    g = L.upsample_bilinear2_backward(rc, g)
                g = L.relu_backward(mask, g)
                g, dw, db = L.conv2d_backward(cc, g)
                name = f"enc-{tag}-{i}"
                _accum(grads, name + ".w", dw)
                _accum(grads, name + ".b", db)

    # ---------------------------------------------------------------- decoder

    def _decode_chunk(self, fused: np.ndarray, keep: bool = True):
        sizes = self.spec.sizes
        n_dec = len(self.spec.decoder)
        h = fused
        caches = []
        maps = {}
        for i in range(1, n_dec + 1):
            name = f"dec-{i}"
            th, tw = sizes[n_dec - i]
            h, rc = L.resize_bilinear(h, th, tw)
            h, cc = L.conv2d_forward(h, self.params[name + ".w"], self.params[name + ".b"])
            mask = None
            if i < n_dec:
                h, mask = L.relu_forward(h)
            maps[name] = h
            if keep:
                caches.append((rc, cc, mask))
        return h, caches, maps

    def _decode_backward(self, caches, dxhat, grads):
        g = dxhat
        for i in range(len(caches), 0, -1):
            rc, cc, mask = caches[i - 1]
            if mask is not None:
                g = L.relu_backward(mask, g)
            g, dw, db = L.conv2d_backward(cc, g)
            _accum(grads, f"dec-{i}.w", dw)
            _accum(grads, f"dec-{i}.b", db)
            g = L.resize_bilinear_backward(rc, g)
        return g

    # ----------------------------------------------------------------- public

    def _check_input(self, X: np.ndarray) -> None:
        if X.ndim != 4 or X.shape[1] != 1 or tuple(X.shape[2:]) != self.spec.input_hw:
            raise ShapeError(f"input shape {X.shape} does not match (N, 1, "
                             f"{self.spec.input_hw[0]}, {self.spec.input_hw[1]})")

    def _chunks(self, n: int):
        return [(s, min(s + self.chunk, n)) for s in range(0, n, self.chunk)]

    def encode_fuse(self, X: np.ndarray) -> LatentBlock:
        self._check_input(X)
        parts = [self._encode_chunk(X[a:b], keep=False)[0] for a, b in self._chunks(len(X))]
        fused = np.concatenate(parts, axis=0)
        spec = self.spec
        return LatentBlock(
            Z=fused.reshape(len(X), -1), hw=spec.latent_hw, channels=spec.latent_channels,
            under_channels=spec.under[-1].channels if spec.under else 0,
            over_channels=spec.over[-1].channels if spec.over else 0,
        )

    def decode(self, rows: np.ndarray) -> np.ndarray:
        spec = self.spec
        if rows.ndim != 2 or rows.shape[1] != spec.latent_dim:
            raise ShapeError(f"latent rows have shape {rows.shape}, expected (N, {spec.latent_dim})")
        fused = rows.reshape(len(rows), spec.latent_channels, *spec.latent_hw)
        parts = [self._decode_chunk(fused[a:b], keep=False)[0] for a, b in self._chunks(len(rows))]
        return np.concatenate(parts, axis=0)

    def reconstruct(self, X: np.ndarray, self_expressive: bool = False) -> np.ndarray:
        Z = self.encode_fuse(X).Z
        if self_expressive:
            Z = self_express(Z, self.C)
        return self.decode(Z)

    def feature_maps(self, X: np.ndarray) -> dict[str, np.ndarray]:
        """Post-activation conv outputs of every layer for a (small) batch."""
        self._check_input(X)
        fused, _, maps = self._encode_chunk(X, keep=False)
        _, _, dmaps = self._decode_chunk(fused, keep=False)
        maps.update(dmaps)
        return maps


def _accum(grads: dict, key: str, value: np.ndarray) -> None:
    if key in grads:
        grads[key] += value
    else:
        grads[key] = value.copy()


def build_network(spec: NetworkSpec, rng: Rng) -> Network:
    """He-normal conv weights (std ``sqrt(2 / (k*k*Cin))``), zero biases, ``C = 1e-4``."""
    params: dict[str, np.ndarray] = {}
    for name, k, cin, cout in spec.conv_layers():
        std = np.sqrt(2.0 / (k * k * cin))
        params[name + ".w"] = rng.normal(k * k * cin * cout).reshape(k, k, cin, cout) * std
        params[name + ".b"] = np.zeros(cout)
    params["C"] = np.full((spec.n_samples, spec.n_samples), C_INIT)
    return Network(spec, params)


def loss_terms(X, Xhat, Z, C, lambda1, lambda2, lambda3) -> dict[str, float]:
    """Individual terms of the joint objective and their sum."""
    rec = float(np.sum((X - Xhat) ** 2))
    reg = float(np.sum(C * C))
    selfexp = float(np.sum((Z - self_express(Z, C)) ** 2))
    total = 0.5 * lambda1 * rec + lambda2 * reg + 0.5 * lambda3 * selfexp
    return {"reconstruction": rec, "regularization": reg, "self_expression": selfexp, "total": total}


def loss_total(X, Xhat, Z, C, lambda1, lambda2, lambda3):
    """Joint objective on given tensors and its gradients w.r.t. ``Xhat``, ``Z`` and ``C``.

    ``lambda1/2 ||X - Xhat||^2 + lambda2 ||C||_F^2 + lambda3/2 ||Z - C^T Z||^2``
    with ``Z`` holding one sample per row.
    """
    terms = loss_terms(X, Xhat, Z, C, lambda1, lambda2, lambda3)
    dXhat = lambda1 * (Xhat - X)
    resid = lambda3 * (Z - self_express(Z, C))
    dZ_se, dC_se = self_express_backward(Z, C, resid)
    dZ = resid - dZ_se
    dC = 2.0 * lambda2 * C - dC_se
    return terms["total"], {"Xhat": dXhat, "Z": dZ, "C": dC}


def objective(net: Network, X: np.ndarray, stage: str, lambdas=None, want_grads: bool = True,
              trainable: str = "all"):
    """Full-batch loss and parameter gradients.

    ``stage='pretrain'``: ``||X - decode(encode(X))||_F^2``; C is bypassed.
    ``stage='finetune'``: the joint objective, decoding the self-expressed rows.
    ``trainable='C'`` skips conv gradients (frozen encoder and decoder).

    Returns ``(loss, grads, terms)``.
    """
    if stage not in ("pretrain", "finetune"):
        raise ValueError(f"unknown stage {stage!r}")
    net._check_input(X)
    n = len(X)
    if stage == "finetune" and net.C.shape != (n, n):
        raise ShapeError(f"C is {net.C.shape} but the batch has {n} samples")
    chunks = net._chunks(n)
    single = len(chunks) == 1
    keep_conv = want_grads and trainable == "all"

    enc_caches = None
    fused_parts = []
    for a, b in chunks:
        fused, caches, _ = net._encode_chunk(X[a:b], keep=keep_conv and single)
        fused_parts.append(fused)
        if single:
            enc_caches = caches
    fused = np.concatenate(fused_parts, axis=0)
    Z = fused.reshape(n, -1)

    if stage == "finetune":
        lambda1, lambda2, lambda3 = lambdas
        C = net.C
        Zs = self_express(Z, C)
    else:
        lambda1, lambda2, lambda3 = 2.0, 0.0, 0.0  # lambda1/2 * rec == rec
        C = None
        Zs = Z
    fused_s = Zs.reshape(fused.shape)

    grads: dict[str, np.ndarray] = {}
    dZs = np.empty_like(Zs) if want_grads else None
    rec = 0.0
    for a, b in chunks:
        xhat, dcaches, _ = net._decode_chunk(fused_s[a:b], keep=want_grads)
        diff = xhat - X[a:b]
        rec += float(np.sum(diff * diff))
        if want_grads:
            dgrads = grads if trainable == "all" else {}
            dfs = net._decode_backward(dcaches, lambda1 * diff, dgrads)
            dZs[a:b] = dfs.reshape(b - a, -1)

    terms = {"reconstruction": rec}
    if stage == "finetune":
        resid = Z - Zs
        terms["regularization"] = float(np.sum(C * C))
        terms["self_expression"] = float(np.sum(resid * resid))
        loss = 0.5 * lambda1 * rec + lambda2 * terms["regularization"] \
            + 0.5 * lambda3 * terms["self_expression"]
    else:
        loss = rec
    terms["total"] = loss
    if not want_grads:
        return loss, {}, terms

    if stage == "finetune":
        g_res = lambda3 * resid
        # Zs = C^T Z feeds both the decoder and the residual Z - Zs
        g_zs = dZs - g_res
        dZ_via, dC = self_express_backward(Z, C, g_zs)
        dZ = g_res + dZ_via
        grads["C"] = dC + 2.0 * lambda2 * C
    else:
        dZ = dZs

    if trainable == "all":
        dfused = dZ.reshape(fused.shape)
        for a, b in chunks:
            caches = enc_caches
            if not single:
                _, caches, _ = net._encode_chunk(X[a:b], keep=True)
            net._encode_backward(caches, dfused[a:b], grads)
    return loss, grads, terms
