"""Closed-form parameter and MAC accounting over recorded layer sites.

Builders emit one LayerSite per primitive layer with the dimensions the
profiler needs; nothing here executes the network. Params and MACs come
from textbook formulas per site kind, so totals can be cross-checked both
against walking the real parameter arrays and against loop-counting
oracles on tiny shapes.
"""

from dataclasses import dataclass, replace

from .blocks import LayerSite
from .errors import ConfigError, ContractError
from .model import ModelConfig, build_model

VARIANT_ORDER = ("original", "ds", "lr", "lrds")


@dataclass(frozen=True)
class CostEntry:
    path: str
    kind: str
    params: int
    macs: int


@dataclass(frozen=True)
class CostReport:
    entries: tuple
    flop_per_mac: int = 2

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.entries)

    @property
    def total_macs(self) -> int:
        return sum(e.macs for e in self.entries)

    @property
    def total_flops(self) -> int:
        return self.total_macs * self.flop_per_mac


def site_params(site: LayerSite) -> int:
    d = site.dims
    if site.kind == "conv":
        return d["e"] * d["c"] * d["kh"] * d["kw"] + d["bias"] * d["e"]
    if site.kind == "depthwise":
        return d["c"] * d["kh"] * d["kw"] + d["bias"] * d["c"]
    if site.kind == "linear":
        return d["d_in"] * d["d_out"] + d["bias"] * d["d_out"]
    if site.kind == "norm":
        return 2 * d["c"]  # scale and shift; running stats are buffers
    if site.kind == "embed":
        return d["rows"] * d["d"]
    if site.kind == "msdeform":
        return 0  # its projections are separate linear sites
    raise ContractError(f"unknown site kind {site.kind!r} at {site.path}")


def site_macs(site: LayerSite, include_overhead: bool = False) -> int:
    d = site.dims
    if site.kind == "conv":
        macs = d["e"] * d["c"] * d["kh"] * d["kw"] * d["h"] * d["w"]
        if include_overhead:
            macs += d["bias"] * d["e"] * d["h"] * d["w"]
        return macs
    if site.kind == "depthwise":
        macs = d["c"] * d["kh"] * d["kw"] * d["h"] * d["w"]
        if include_overhead:
            macs += d["bias"] * d["c"] * d["h"] * d["w"]
        return macs
    if site.kind == "linear":
        macs = d["d_in"] * d["d_out"] * d["tokens"]
        if include_overhead:
            macs += d["bias"] * d["d_out"] * d["tokens"]
        return macs
    if site.kind == "norm":
        # scale + shift per element when overhead is counted; activations
        # are never counted
        return 2 * d["c"] * d["h"] * d["w"] if include_overhead else 0
    if site.kind == "embed":
        return 0
    if site.kind == "msdeform":
        # per query, head, and sample: 4 bilinear corner MACs plus 1
        # weighting MAC for each of the d_head channels
        return (d["queries"] * d["heads"] * d["samples"] * 5 * d["d_head"])
    raise ContractError(f"unknown site kind {site.kind!r} at {site.path}")


def cost_report(sites, flop_per_mac: int = 2,
                include_overhead: bool = False) -> CostReport:
    if flop_per_mac < 1:
        raise ConfigError(f"flop_per_mac must be >= 1, got {flop_per_mac}")
    entries = tuple(CostEntry(s.path, s.kind, site_params(s),
                              site_macs(s, include_overhead))
                    for s in sites)
    return CostReport(entries=entries, flop_per_mac=flop_per_mac)


def profile_model(cfg: ModelConfig, flop_per_mac: int = 2,
                  include_overhead: bool = False) -> CostReport:
    _, sites = build_model(cfg, seed=0)
    return cost_report(sites, flop_per_mac, include_overhead)


def count_params(cfg: ModelConfig) -> CostReport:
    return profile_model(cfg)


def count_flops(cfg: ModelConfig, input_size=None, flop_per_mac: int = 2,
                include_overhead: bool = False) -> CostReport:
    if input_size is not None:
        cfg = replace(cfg, input_size=tuple(input_size))
    return profile_model(cfg, flop_per_mac, include_overhead)


# ------------------------------------------------------- variant comparison

@dataclass(frozen=True)
class VariantCost:
    variant: str
    params: int
    macs: int
    flops: int
    params_reduction: float  # 1 - variant/original
    flops_reduction: float


def compare_variants(cfg: ModelConfig, flop_per_mac: int = 2,
                     include_overhead: bool = False) -> list:
    """Same architecture, conv/linear realizations swapped; original first."""
    totals = {}
    for variant in VARIANT_ORDER:
        rep = profile_model(replace(cfg, variant=variant), flop_per_mac,
                            include_overhead)
        totals[variant] = (rep.total_params, rep.total_flops)
    base_p, base_f = totals["original"]
    out = []
    for variant in VARIANT_ORDER:
        p, f = totals[variant]
        out.append(VariantCost(
            variant=variant, params=p, macs=f // flop_per_mac, flops=f,
            params_reduction=1.0 - p / base_p,
            flops_reduction=1.0 - f / base_f))
    return out


# ----------------------------------------------------------------- reports

def _fmt_count(n: int) -> str:
    if n >= 10 ** 9:
        return f"{n / 10 ** 9:.2f}G"
    if n >= 10 ** 6:
        return f"{n / 10 ** 6:.2f}M"
    if n >= 10 ** 3:
        return f"{n / 10 ** 3:.2f}K"
    return str(n)


def format_table(report: CostReport, title: str = "cost report") -> str:
    rows = [(e.path, e.kind, str(e.params), str(e.macs))
            for e in report.entries]
    rows.append(("TOTAL", "", str(report.total_params),
                 str(report.total_macs)))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    head = f"{title}: params={_fmt_count(report.total_params)} " \
           f"flops={_fmt_count(report.total_flops)} " \
           f"(x{report.flop_per_mac}/MAC)"
    lines = [head, "-" * len(head)]
    for path, kind, p, m in rows:
        lines.append(f"{path:<{widths[0]}}  {kind:<{widths[1]}}  "
                     f"{p:>{widths[2]}}  {m:>{widths[3]}}")
    return "\n".join(lines)


def format_records(report: CostReport) -> str:
    """Machine-readable: one tab-separated entry per line."""
    return "\n".join(f"{e.path}\t{e.kind}\t{e.params}\t{e.macs}"
                     for e in report.entries) + "\n"


def format_comparison(rows) -> str:
    lines = [f"{'variant':<10}{'params':>14}{'flops':>14}"
             f"{'params cut':>12}{'flops cut':>12}"]
    for r in rows:
        lines.append(f"{r.variant:<10}{r.params:>14}{r.flops:>14}"
                     f"{r.params_reduction:>11.1%}{r.flops_reduction:>11.1%}")
    return "\n".join(lines)
