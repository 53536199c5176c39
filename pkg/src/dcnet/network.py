"""Full network wiring, configuration and complexity report."""
from __future__ import annotations

import contextlib
import hashlib
import json
from dataclasses import MISSING, asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .autodiff import ops
from .autodiff.layers import Conv2d, ConvUnit, Module
from .autodiff.tensor import ShapeError, Tensor, as_tensor, no_grad
from .ccf import CCF
from .dar import AggregationUnit, AuxiliaryStream
from .dcp import DCP
from .losses import LossConfig
from .saliency import DecompositionSubnet, scale_channels

ENCODER_TABLE = (32, 64, 128, 256, 512)


class ConfigError(ValueError):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


@dataclass
class NetworkConfig:
    extent: int = 64
    width: float = 0.25
    encoder_channels: tuple = ENCODER_TABLE
    tau: int = 1
    pooling: str = "dcp"  # dcp | max | avg
    fusion: str = "ccf"  # ccf | concat | add
    coupler: bool = True
    dar: bool = True
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    lr_decay: float = 1.0  # per-epoch multiplicative step-size schedule
    batch_size: int = 4
    epochs: int = 30
    samples: int = 400
    val_fraction: float = 0.2
    difficulty: str = "default"
    data_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = _build(LossConfig, self.loss, "loss.")
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.extent, int) or self.extent <= 0 or self.extent % 16:
            raise ConfigError("extent", f"must be a positive multiple of 16, got {self.extent!r}")
        if not self.width > 0:
            raise ConfigError("width", "must be positive")
        if len(self.encoder_channels) != 5 or min(self.encoder_channels) < 1:
            raise ConfigError("encoder_channels", "needs five positive channel counts")
        if self.tau < 0:
            raise ConfigError("tau", "must be >= 0")
        if self.pooling not in ("dcp", "max", "avg"):
            raise ConfigError("pooling", f"unknown pooling {self.pooling!r}")
        if self.fusion not in ("ccf", "concat", "add"):
            raise ConfigError("fusion", f"unknown fusion {self.fusion!r}")
        if not self.lr > 0:
            raise ConfigError("lr", "must be positive")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(name, "must lie in [0, 1)")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("lr_decay", "must lie in (0, 1]")
        for name in ("batch_size", "epochs", "samples"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction", "must lie in (0, 1)")

    @property
    def channels(self) -> list[int]:
        return [scale_channels(c, self.width) for c in self.encoder_channels]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return _build(cls, d, "")


def _build(cls, d: dict, prefix: str):
    if not isinstance(d, dict):
        raise ConfigError(prefix.rstrip(".") or "config", "expected a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(prefix + unknown[0], "unknown field")
    kwargs = {}
    for k, v in d.items():
        default = _default(cls, k)
        if isinstance(default, bool):
            ok = isinstance(v, bool)
        elif isinstance(default, (int, float)) and not isinstance(default, bool):
            ok = isinstance(v, (int, float)) and not isinstance(v, bool)
            if ok and isinstance(default, int) and not isinstance(default, bool):
                ok = float(v).is_integer()
                v = int(v) if ok else v
        elif isinstance(default, str):
            ok = isinstance(v, str)
        elif isinstance(default, tuple):
            ok = isinstance(v, list) and all(isinstance(x, int) for x in v)
        else:
            ok = True
        if not ok:
            raise ConfigError(prefix + k, f"bad type {type(v).__name__}")
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(prefix + exc.field, str(exc).split(": ", 1)[1]) from None
    except ValueError as exc:
        raise ConfigError(prefix.rstrip(".") or "config", str(exc)) from None


def _default(cls, name):
    f = {f.name: f for f in fields(cls)}[name]
    return f.default_factory() if f.default_factory is not MISSING else f.default


@dataclass
class Edge:
    unit: str
    kind: str
    inputs: tuple
    shape: tuple


@dataclass
class ForwardTrace:
    s_f: Tensor
    s_b: Tensor
    a: list  # A_0 .. A_9 (A_1..A_9 empty without the coupler)
    e_f: list  # E^f_1 .. E^f_5
    prepool: list  # f3x3 outputs of encoder blocks 1..4
    d_f: list  # D^f_1 .. D^f_4
    e_b: list  # E^b_0 .. E^b_5
    d_b: list  # D^b_1 .. D^b_4
    y_hat: Tensor
    edges: list

    def shape_walk(self) -> list[tuple[str, tuple]]:
        return [(e.unit, e.shape) for e in self.edges]


class _Pool(Module):
    def __init__(self, kind: str, c: int, tau: int, rng):
        super().__init__()
        self.kind = kind
        if kind == "dcp":
            self.dcp = DCP(c, tau=tau, rng=rng)

    def forward(self, x):
        if self.kind == "dcp":
            return self.dcp(x)
        return ops.max_pool(x, 2) if self.kind == "max" else ops.avg_pool(x, 2)


class DCNet(Module):
    """Decomposition subnet followed by the coupling encoder/decoder.

    Encoder block j applies f3x3 to A_{j-1} and pools (block 5 unpooled).
    Decoder block j applies f3x3 to A_{4+j} and fuses it with the pre-pool
    feature of encoder block 5-j. Aggregation units pair every main-stream
    block with the matching auxiliary block. Without the coupler the
    auxiliary stream and aggregation units are dropped and blocks chain
    directly.
    """

    def __init__(self, cfg: Optional[NetworkConfig] = None):
        super().__init__()
        cfg = cfg or NetworkConfig()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        c = cfg.channels
        self.decomposition = DecompositionSubnet(cfg.width, rng)

        self.enc = []
        self.pools = []
        prev = 2
        for j in range(5):
            self.enc.append(self.add_module(f"enc{j + 1}", ConvUnit(prev, c[j], k=3, rng=rng)))
            if j < 4:
                self.pools.append(self.add_module(f"pool{j + 1}", _Pool(cfg.pooling, c[j], cfg.tau, rng)))
            prev = 2 * c[j] if cfg.coupler else c[j]

        self.dec = []
        self.fuse = []
        for j in range(4):
            cj = c[3 - j]
            self.dec.append(self.add_module(f"dec{j + 1}", ConvUnit(prev, cj, k=3, rng=rng)))
            self.fuse.append(self.add_module(f"fuse{j + 1}", CCF(cj, mode=cfg.fusion, rng=rng)))
            prev = 2 * cj if cfg.coupler else cj
        self.head = Conv2d(prev, 1, k=1, rng=rng)

        self.agg = []
        if cfg.coupler:
            self.aux = AuxiliaryStream(c, cin=2, rng=rng)
            pairs = c + [c[3], c[2], c[1], c[0]]
            for j, cj in enumerate(pairs):
                self.agg.append(self.add_module(f"agg{j + 1}", AggregationUnit(cj, cj, cj, dar=cfg.dar, rng=rng)))

    def forward(self, image) -> ForwardTrace:
        image = as_tensor(image)
        if image.ndim != 4 or image.shape[-1] != 1:
            raise ShapeError("dcnet", f"expected (N, H, W, 1) input, got {image.shape}")
        if image.shape[1] % 16 or image.shape[2] % 16:
            raise ShapeError("dcnet", f"extent {image.shape[1]}x{image.shape[2]} not divisible by 16")
        edges: list[Edge] = []

        def rec(unit, kind, inputs, out):
            edges.append(Edge(unit, kind, tuple(inputs), tuple(out.shape)))
            return out

        sal = self.decomposition(image)
        rec("decomposition", "decomposition", ["I"], sal.fg)
        a0 = rec("A0", "concat", ["I", "S_f"], ops.concat([image, sal.fg]))
        coupler = self.cfg.coupler
        a, e_f, prepool, e_b, d_b = [a0], [], [], [], []

        if coupler:
            eb0 = rec("Eb0", "concat", ["I", "S_b"], ops.concat([image, sal.bg]))
            aux = self.aux(eb0)
            e_b = [eb0] + aux.contracting
            d_b = aux.expanding
            for j, t in enumerate(aux.contracting):
                rec(f"Eb{j + 1}", "aux_down", [f"Eb{j}"], t)
            for j, t in enumerate(aux.expanding):
                rec(f"Db{j + 1}", "aux_up", [f"Db{j}" if j else "Eb5", f"skip_b{4 - j}"], t)

        x, src = a0, "A0"
        for j in range(5):
            unit = f"Ef{j + 1}"
            h = self._call(unit, self.enc[j], x)
            rec(f"enc{j + 1}", "f3x3", [src], h)
            if j < 4:
                prepool.append(h)
                h = self._call(unit, self.pools[j], h)
                rec(f"pool{j + 1}", self.cfg.pooling, [f"enc{j + 1}"], h)
            e_f.append(h)
            src = unit
            if coupler:
                h = self._pair(f"A{j + 1}", self.agg[j], h, e_b[j + 1])
                rec(f"A{j + 1}", "aggregate", [unit, f"Eb{j + 1}"], h)
                a.append(h)
                src = f"A{j + 1}"
            x = h

        d_f = []
        for j in range(4):
            unit = f"Df{j + 1}"
            h = self._call(unit, self.dec[j], x)
            rec(f"dec{j + 1}", "f3x3", [src], h)
            skip = prepool[3 - j]
            h = self._pair(unit, self.fuse[j], skip, h)
            rec(f"fuse{j + 1}", self.cfg.fusion, [f"enc{4 - j}", f"dec{j + 1}"], h)
            d_f.append(h)
            src = unit
            if coupler:
                h = self._pair(f"A{5 + j + 1}", self.agg[5 + j], h, d_b[j])
                rec(f"A{6 + j}", "aggregate", [unit, f"Db{j + 1}"], h)
                a.append(h)
                src = f"A{6 + j}"
            x = h

        y_hat = ops.sigmoid(self.head(x))
        rec("Df5", "head", [src], y_hat)
        return ForwardTrace(sal.fg, sal.bg, a, e_f, prepool, d_f, e_b, d_b, y_hat, edges)

    @staticmethod
    def _call(unit, module, x):
        try:
            return module(x)
        except ShapeError as exc:
            raise ShapeError(unit, str(exc)) from exc

    @staticmethod
    def _pair(unit, module, x, y):
        try:
            return module(x, y)
        except ShapeError as exc:
            raise ShapeError(unit, str(exc)) from exc

    def predict(self, image, batch: int = 8) -> np.ndarray:
        """Inference in eval mode without building a graph."""
        was = self.training
        self.eval()
        outs = []
        try:
            with no_grad():
                for i in range(0, len(image), batch):
                    outs.append(self.forward(image[i:i + batch]).y_hat.data)
        finally:
            self.train(was)
        return np.concatenate(outs)


def dcnet_forward(image, model: DCNet) -> ForwardTrace:
    return model(image)


# ------------------------------------------------------------------- summary

@contextlib.contextmanager
def _count_macs():
    counter = {"macs": 0}
    conv_fwd, dcp_fwd, mm = Conv2d.forward, DCP.forward, ops.matmul

    def conv(self, x):
        out = conv_fwd(self, x)
        counter["macs"] += out.shape[0] * out.shape[1] * out.shape[2] * self.k * self.k * self.cin * self.cout
        return out

    def dcp(self, x):
        m = (x.shape[1] // self.r) * (x.shape[2] // self.r)
        counter["macs"] += x.shape[0] * m * self.c * self.r * self.r * (2 * self.tau + 1)
        return dcp_fwd(self, x)

    def matmul(a, b):
        out = mm(a, b)
        counter["macs"] += int(np.prod(out.shape)) * as_tensor(a).shape[-1]
        return out

    Conv2d.forward, DCP.forward, ops.matmul = conv, dcp, matmul
    try:
        yield counter
    finally:
        Conv2d.forward, DCP.forward, ops.matmul = conv_fwd, dcp_fwd, mm


def model_summary(cfg: Optional[NetworkConfig] = None, model: Optional[DCNet] = None) -> dict:
    """Per-module parameter counts and multiply-accumulates of one forward pass (batch 1)."""
    cfg = cfg or (model.cfg if model is not None else NetworkConfig())
    model = model or DCNet(cfg)
    modules = {name: mod.num_parameters() for name, mod in model._modules.items()}
    modules.update({name: int(p.size) for name, p in model._params.items()})
    x = np.zeros((1, cfg.extent, cfg.extent, 1))
    with _count_macs() as counter:
        model.predict(x)
    return {
        "modules": modules,
        "total_parameters": model.num_parameters(),
        "macs": int(counter["macs"]),
        "config_hash": cfg.config_hash(),
    }
