"""Layer-by-layer operation and parameter ledger.

Conventions: a MAC is 2 FLOPs; a binary MAC is 2 BOPs; elementwise ops are
1 FLOP each.  Aggregates follow ``OPs = FLOPs + BOPs/64`` and
``Params = params_fp + params_bi/32``.  Low-bit predictor convs are folded
into the binary columns scaled by ``w_bits * a_bits`` (a 1x1-bit MAC is one
binary MAC), so the same aggregate formula covers them.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field, replace

from .blocks import BasicBlock, ChannelShiftRescale, EConv, FPBlock, SpatialRescale
from .layers import Conv2d
from .network import Model, ModelConfig, Upsampler

KINDS = ("fp", "binary", "predictor")
COMPONENTS = ("head", "body", "elementwise", "spatial", "channel", "tail")


@dataclass(frozen=True)
class CostRow:
    name: str
    kind: str
    component: str
    macs: int = 0
    flops: int = 0
    bops: int = 0
    params_fp: int = 0
    params_bi: int = 0

    @property
    def ops(self) -> float:
        return self.flops + self.bops / 64

    @property
    def params(self) -> float:
        return self.params_fp + self.params_bi / 32


@dataclass
class CostReport:
    rows: list[CostRow]
    geometry: tuple[int, int]
    config: ModelConfig

    @property
    def flops(self) -> int:
        return sum(r.flops for r in self.rows)

    @property
    def bops(self) -> int:
        return sum(r.bops for r in self.rows)

    @property
    def ops(self) -> float:
        return self.flops + self.bops / 64

    @property
    def params_fp(self) -> int:
        return sum(r.params_fp for r in self.rows)

    @property
    def params_bi(self) -> int:
        return sum(r.params_bi for r in self.rows)

    @property
    def params(self) -> float:
        return self.params_fp + self.params_bi / 32

    def component(self, name: str) -> tuple[float, float]:
        """(OPs, Params) of one component."""
        rows = [r for r in self.rows if r.component == name]
        return sum(r.ops for r in rows), sum(r.params for r in rows)

    def components(self) -> dict[str, tuple[float, float]]:
        return {c: self.component(c) for c in COMPONENTS}

    def format(self) -> str:
        h, w = self.geometry
        lines = [f"cost ledger: {self.config.variant} {self.config.blocks}x{self.config.channels} "
                 f"x{self.config.scale}, LR input {h}x{w}",
                 f"{'layer':<34} {'kind':<9} {'MACs':>14} {'FLOPs':>14} {'BOPs':>14} {'P_fp':>9} {'P_bi':>10}"]
        for r in self.rows:
            lines.append(f"{r.name:<34} {r.kind:<9} {r.macs:>14,} {r.flops:>14,} {r.bops:>14,} "
                         f"{r.params_fp:>9,} {r.params_bi:>10,}")
        lines.append(f"total: FLOPs {self.flops:,}  BOPs {self.bops:,}  OPs {fmt_giga(self.ops)}  "
                     f"Params {fmt_mega(self.params)}")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["name", "kind", "component", "macs", "flops", "bops", "params_fp", "params_bi"])
            for r in self.rows:
                wr.writerow([r.name, r.kind, r.component, r.macs, r.flops, r.bops, r.params_fp, r.params_bi])
            wr.writerow(["TOTAL", "", "", sum(r.macs for r in self.rows), self.flops, self.bops,
                         self.params_fp, self.params_bi])


def fmt_giga(x: float) -> str:
    return f"{x / 1e9:.2f}G"


def fmt_mega(x: float) -> str:
    return f"{x / 1e6:.3f}M"


# -- counting ----------------------------------------------------------------------------

def _conv(name, conv: Conv2d, h, w, component, kind="fp") -> CostRow:
    macs = h * w * conv.out_channels * conv.in_channels * conv.kernel ** 2
    return CostRow(name, kind, component, macs, 2 * macs, 0, conv.num_parameters())


def _spatial_rows(name, sp: SpatialRescale, h, w) -> list[CostRow]:
    c = sp.channels
    macs = h * w * c * 9
    # sigmoid over the H x W map and the per-element multiply by S
    tail_ops = h * w + h * w * c
    if sp.bits:
        bw, ba = sp.bits
        # activation quantizer (one op per element) plus low-bit MACs
        return [CostRow(name, "predictor", "spatial", macs, tail_ops + h * w * c, 2 * macs * bw * ba,
                        params_fp=1 + 2, params_bi=9 * c * bw)]
    return [CostRow(name, "predictor", "spatial", macs, 2 * macs + tail_ops, 0, params_fp=9 * c + 1)]


def _channel_rows(name, ch: ChannelShiftRescale, h, w) -> list[CostRow]:
    c = ch.channels
    hidden = ch.fc1.params["bias"].size
    fc_macs = c * hidden + hidden * 2 * c
    # GAP adds, FC MACs, ReLU, sigmoid on C scales, beta + Cs, multiply by Cr
    flops = h * w * c + 2 * fc_macs + hidden + c + c + h * w * c
    return [CostRow(name, "predictor", "channel", fc_macs, flops, 0, ch.num_parameters())]


def _econv_rows(name, ec: EConv, h, w) -> list[CostRow]:
    c = ec.channels
    macs = h * w * c * c * 9
    rows = [CostRow(f"{name}.conv", "binary", "body", macs, 0, 2 * macs,
                    params_fp=1 + c + c,  # alpha, beta, per-filter scale
                    params_bi=c * c * 9)]
    # threshold subtract, scale multiply, identity skip
    rows.append(CostRow(f"{name}.elementwise", "fp", "elementwise", 0, 3 * h * w * c))
    if ec.spatial is not None:
        rows += _spatial_rows(f"{name}.spatial", ec.spatial, h, w)
    if ec.channel is not None:
        rows += _channel_rows(f"{name}.channel", ec.channel, h, w)
    return rows


def _tail_rows(name, tail: Upsampler, h, w) -> list[CostRow]:
    rows = []
    for i, (conv, r) in enumerate(tail.stages):
        rows.append(_conv(f"{name}.up{i}", conv, h, w, "tail"))
        h, w = h * r, w * r
    if tail.final is not None:
        rows.append(_conv(f"{name}.final", tail.final, h, w, "tail"))
    return rows


def count_model(m: Model, lr_input: tuple[int, int] = (128, 128)) -> CostReport:
    """Per-layer ledger of ``m`` for an LR input of ``lr_input`` = (H, W)."""
    h, w = lr_input
    if h <= 0 or w <= 0:
        raise ValueError(f"geometry must be positive, got {lr_input}")
    c = m.cfg.channels
    rows = [_conv("head", m.head, h, w, "head")]
    for i, block in enumerate(m.body):
        name = f"body.{i}"
        if isinstance(block, BasicBlock):
            rows += _econv_rows(f"{name}.econv1", block.econv1, h, w)
            rows += _econv_rows(f"{name}.econv2", block.econv2, h, w)
            if block.rho != 1.0:
                rows.append(CostRow(f"{name}.rho", "fp", "elementwise", 0, 3 * h * w * c))
        elif isinstance(block, FPBlock):
            rows.append(_conv(f"{name}.conv1", block.conv1, h, w, "body"))
            rows.append(_conv(f"{name}.conv2", block.conv2, h, w, "body"))
            # ReLU, residual add (and the rho multiply when used)
            rows.append(CostRow(f"{name}.elementwise", "fp", "elementwise", 0,
                                (2 if block.rho == 1.0 else 3) * h * w * c))
        else:
            raise TypeError(f"unsupported block type {type(block).__name__}")
    if m.body_conv is not None:
        rows.append(_conv("body_conv", m.body_conv, h, w, "body"))
    rows.append(CostRow("global_residual", "fp", "elementwise", 0, h * w * c))
    rows += _tail_rows("tail", m.tail, h, w)
    return CostReport(rows, (h, w), m.cfg)


def tail_cost(channels: int, scale: int, kind: str, lr_input=(128, 128)) -> tuple[float, float]:
    """(OPs, Params) of an upsampling tail on its own."""
    rows = _tail_rows("tail", Upsampler(channels, scale, kind), *lr_input)
    return sum(r.ops for r in rows), sum(r.params for r in rows)


# -- published reference rows -------------------------------------------------------------

@dataclass(frozen=True)
class PublishedTarget:
    name: str
    ops: float
    params: float
    config: ModelConfig = field(compare=False)


PUBLISHED_TARGETS = {
    "srresnet_fp": PublishedTarget("SRResNet-fp", 64.98e9, 1.52e6, ModelConfig(variant="fp")),
    "ebsr_light": PublishedTarget("EBSR-light", 2.27e9, 0.08e6, ModelConfig.light()),
    "ebsr": PublishedTarget("EBSR", 28.58e9, 1.10e6, ModelConfig.large()),
    "baseline": PublishedTarget("Baseline", 1.56e9, 0.03e6, ModelConfig.light(variant="baseline")),
    "spatial_only": PublishedTarget("Baseline + spatial re-scale", 2.16e9, 0.05e6,
                                ModelConfig.light(variant="spatial_only")),
    "channel_only": PublishedTarget("Baseline + chl-wise shift & re-scale", 1.63e9, 0.06e6,
                                ModelConfig.light(variant="channel_only")),
    "ebsr_sq_w1a8": PublishedTarget("EBSR-SQ (W1A8)", 1.75e9, 0.06e6, ModelConfig.light(variant="ebsr_sq", sq_bits=(1, 8))),
    "ebsr_sq_w2a4": PublishedTarget("EBSR-SQ (W2A4)", 1.75e9, 0.06e6, ModelConfig.light(variant="ebsr_sq", sq_bits=(2, 4))),
    "ebsr_sq_w4a4": PublishedTarget("EBSR-SQ (W4A4)", 1.82e9, 0.06e6, ModelConfig.light(variant="ebsr_sq", sq_bits=(4, 4))),
}

# increments of the two predictors over the binary baseline
PUBLISHED_INCREMENTS = {
    "spatial": (0.60e9, 0.02e6),
    "channel": (0.07e9, 0.03e6),
}


@dataclass(frozen=True)
class Hypothesis:
    tail: str
    elementwise: bool
    binary_params: bool
    ops: float
    params: float

    def label(self) -> str:
        return (f"tail={self.tail}, elementwise {'counted' if self.elementwise else 'excluded'}, "
                f"binary weights {'counted' if self.binary_params else 'excluded'}")


@dataclass
class DeviationTable:
    target: PublishedTarget
    report: CostReport
    components: dict[str, tuple[float, float]]
    hypotheses: list[Hypothesis]

    @staticmethod
    def rel(value: float, target: float) -> float:
        return (value - target) / target

    @property
    def ops_deviation(self) -> float:
        return self.rel(self.report.ops, self.target.ops)

    @property
    def params_deviation(self) -> float:
        return self.rel(self.report.params, self.target.params)

    def best_ops(self) -> Hypothesis:
        return min(self.hypotheses, key=lambda hy: abs(self.rel(hy.ops, self.target.ops)))

    def best_params(self) -> Hypothesis:
        return min(self.hypotheses, key=lambda hy: abs(self.rel(hy.params, self.target.params)))

    def body_predictor_subtotal(self) -> float:
        return sum(self.components[c][0] for c in ("body", "elementwise", "spatial", "channel"))

    def target_body_predictor_subtotal(self) -> float:
        """Published total minus head and the tail of the best-fitting OPs hypothesis."""
        cfg = self.report.config
        tail_ops, _ = tail_cost(cfg.channels, cfg.scale, self.best_ops().tail, self.report.geometry)
        return self.target.ops - self.components["head"][0] - tail_ops

    def format(self) -> str:
        t = self.target
        lines = [f"deviation vs {t.name}: target {fmt_giga(t.ops)} OPs / {fmt_mega(t.params)} params",
                 f"  as built (tail={self.report.config.tail}): {fmt_giga(self.report.ops)} "
                 f"({self.ops_deviation:+.1%}), {fmt_mega(self.report.params)} ({self.params_deviation:+.1%})",
                 f"  {'component':<12} {'OPs':>10} {'Params':>10}"]
        for name, (ops, params) in self.components.items():
            lines.append(f"  {name:<12} {fmt_giga(ops):>10} {fmt_mega(params):>10}")
        lines.append("  accounting hypotheses (OPs dev / Params dev):")
        bo, bp = self.best_ops(), self.best_params()
        for hy in self.hypotheses:
            flag = (" <- best OPs" if hy is bo else "") + (" <- best Params" if hy is bp else "")
            lines.append(f"    {hy.label():<68} {fmt_giga(hy.ops):>8} {self.rel(hy.ops, t.ops):+7.1%}  "
                         f"{fmt_mega(hy.params):>8} {self.rel(hy.params, t.params):+7.1%}{flag}")
        sub, tsub = self.body_predictor_subtotal(), self.target_body_predictor_subtotal()
        lines.append(f"  body+predictor subtotal {fmt_giga(sub)} vs implied {fmt_giga(tsub)} "
                     f"({self.rel(sub, tsub):+.1%})")
        return "\n".join(lines)


def compare_to_published(report: CostReport, target: str | PublishedTarget) -> DeviationTable:
    """Compare a ledger with a published row and rank accounting hypotheses."""
    if isinstance(target, str):
        target = PUBLISHED_TARGETS[target]
    comps = report.components()
    cfg = report.config
    bin_params = sum(r.params_bi / 32 for r in report.rows if r.kind == "binary")
    built_tail = comps["tail"]
    hyps = []
    for tail, elem, binp in itertools.product(("edsr", "conv"), (True, False), (True, False)):
        t_ops, t_params = tail_cost(cfg.channels, cfg.scale, tail, report.geometry)
        ops = report.ops - built_tail[0] + t_ops - (0 if elem else comps["elementwise"][0])
        params = report.params - built_tail[1] + t_params - (0 if binp else bin_params)
        hyps.append(Hypothesis(tail, elem, binp, ops, params))
    return DeviationTable(target, report, comps, hyps)


def count_config(cfg: ModelConfig, lr_input=(128, 128)) -> CostReport:
    return count_model(Model(cfg), lr_input)


def predictor_increments(lr_input=(128, 128), base: ModelConfig | None = None) -> dict[str, tuple[float, float]]:
    """(OPs, Params) added by each predictor over the binary baseline."""
    base = base or ModelConfig.light(variant="baseline")
    ref = count_config(base, lr_input)
    out = {}
    for comp, variant in (("spatial", "spatial_only"), ("channel", "channel_only")):
        rep = count_config(replace(base, variant=variant), lr_input)
        out[comp] = (rep.ops - ref.ops, rep.params - ref.params)
    return out
