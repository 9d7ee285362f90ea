"""Detector configuration graphs and scaled family synthesis.

A configuration document is JSON with ``backbone`` and ``head`` arrays of
``[from, repeats, module, args]`` rows (an optional fifth element tags the
row with its feature level, ``"P3"``/``"P4"``/``"P5"``). ``from`` is an
integer or list of integers; ``-1`` means the previous layer.

Synthesizing a family prunes the graph to the layers feeding the selected
heads, scales depth and width, optionally swaps attention blocks for
residual blocks, and renumbers the survivors.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Union

P_LEVELS = ("P3", "P4", "P5")

CONV = "conv"
RESIDUAL = "residual_block"
ATTENTION = "attention_block"
UPSAMPLE = "upsample"
CONCAT = "concat"
DETECT = "detect"
KNOWN_KINDS = (CONV, RESIDUAL, ATTENTION, UPSAMPLE, CONCAT, DETECT)

# Image channels feeding layer 0, used by the parameter proxy.
INPUT_CHANNELS = 3


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration graphs."""


@dataclass(frozen=True)
class LayerNode:
    index: int
    from_links: tuple[int, ...]
    repeats: int
    module_kind: str
    channel_args: tuple[int, ...]
    p_level: Optional[str] = None

    def resolved_links(self) -> tuple[int, ...]:
        return tuple(self.index - 1 if f == -1 else f for f in self.from_links)

    @property
    def is_parametric(self) -> bool:
        """True for layers whose first arg is a learned output width."""
        return self.module_kind not in (UPSAMPLE, CONCAT, DETECT)


@dataclass(frozen=True)
class DetectorGraph:
    layers: tuple[LayerNode, ...]
    backbone_len: int
    detect_index: int

    def __post_init__(self):
        validate_graph(self)

    @property
    def detect(self) -> LayerNode:
        return self.layers[self.detect_index]

    def head_nodes(self) -> dict[str, int]:
        """Map each p-level feeding the detect node to its layer index."""
        detect_inputs = self.detect.resolved_links()
        tagged = {self.layers[i].p_level: i for i in detect_inputs if self.layers[i].p_level}
        if len(tagged) == len(detect_inputs):
            return tagged
        if any(self.layers[i].p_level for i in detect_inputs):
            raise ConfigError("detect inputs are only partially tagged with p-levels")
        # untagged: detect inputs are taken in P3, P4, P5 order
        if len(detect_inputs) > len(P_LEVELS):
            raise ConfigError("detect node has more inputs than known p-levels")
        return dict(zip(P_LEVELS, detect_inputs))


@dataclass(frozen=True)
class FamilySpec:
    alpha: float
    beta: float
    c_max: Optional[int] = None  # None means uncapped
    heads: frozenset[str] = field(default_factory=lambda: frozenset(P_LEVELS))
    simplify_attention: bool = False
    granularity: int = 8

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError("alpha and beta must be positive")
        if self.granularity < 1:
            raise ConfigError("granularity must be positive")
        if self.c_max is not None and self.c_max < self.granularity:
            raise ConfigError("c_max must be at least the channel granularity")
        heads = frozenset(self.heads)
        if not heads or not heads <= set(P_LEVELS):
            raise ConfigError(f"heads must be a non-empty subset of {P_LEVELS}")
        object.__setattr__(self, "heads", heads)


def validate_graph(graph: DetectorGraph) -> None:
    layers = graph.layers
    for pos, node in enumerate(layers):
        if node.index != pos:
            raise ConfigError(f"layer at position {pos} carries index {node.index}")
        if node.repeats < 1:
            raise ConfigError(f"layer {pos}: repeats must be >= 1")
        if not node.from_links:
            raise ConfigError(f"layer {pos}: empty from list")
        for f in node.from_links:
            if f == -1:
                if pos == 0:
                    continue  # layer 0 reads the image
            elif f < -1:
                raise ConfigError(f"layer {pos}: unsupported relative link {f}")
            elif f >= pos:
                raise ConfigError(f"layer {pos}: dangling link {f}")
        if node.module_kind != DETECT and any(c < 1 for c in node.channel_args):
            raise ConfigError(f"layer {pos}: channel counts must be >= 1")
        if node.p_level is not None and node.p_level not in P_LEVELS:
            raise ConfigError(f"layer {pos}: unknown p-level {node.p_level!r}")
    detects = [n.index for n in layers if n.module_kind == DETECT]
    if len(detects) != 1:
        raise ConfigError(f"expected exactly one detect node, found {len(detects)}")
    if detects[0] != graph.detect_index:
        raise ConfigError("detect_index does not point at the detect node")
    if not 0 <= graph.backbone_len <= len(layers):
        raise ConfigError("backbone_len out of range")
    heads = graph.head_nodes()
    if len(set(heads.values())) != len(graph.detect.from_links):
        raise ConfigError("detect inputs must resolve to distinct p-levels")


# -- document I/O -------------------------------------------------------------


def _parse_row(row, index: int) -> LayerNode:
    if not isinstance(row, (list, tuple)) or len(row) not in (4, 5):
        raise ConfigError(f"layer {index}: expected [from, repeats, module, args(, p_level)]")
    frm, repeats, module, args = row[:4]
    p_level = row[4] if len(row) == 5 else None
    links = [frm] if isinstance(frm, int) and not isinstance(frm, bool) else frm
    if not isinstance(links, (list, tuple)) or not all(
        isinstance(f, int) and not isinstance(f, bool) for f in links
    ):
        raise ConfigError(f"layer {index}: malformed from field {frm!r}")
    if not isinstance(repeats, int) or isinstance(repeats, bool):
        raise ConfigError(f"layer {index}: repeats must be an integer")
    if not isinstance(module, str) or not module:
        raise ConfigError(f"layer {index}: module must be a non-empty string")
    if not isinstance(args, (list, tuple)) or not all(
        isinstance(a, int) and not isinstance(a, bool) for a in args
    ):
        raise ConfigError(f"layer {index}: args must be a list of integers")
    return LayerNode(index, tuple(links), repeats, module, tuple(args), p_level)


def parse_config(doc: Union[str, dict]) -> DetectorGraph:
    """Parse a configuration document (JSON text or an already-loaded dict)."""
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "backbone" not in doc or "head" not in doc:
        raise ConfigError("document needs 'backbone' and 'head' sections")
    rows = list(doc["backbone"]) + list(doc["head"])
    layers = tuple(_parse_row(row, i) for i, row in enumerate(rows))
    detects = [n.index for n in layers if n.module_kind == DETECT]
    if len(detects) != 1:
        raise ConfigError(f"expected exactly one detect node, found {len(detects)}")
    return DetectorGraph(layers, len(doc["backbone"]), detects[0])


def emit_config(graph: DetectorGraph) -> dict:
    def row(node: LayerNode):
        frm = node.from_links[0] if len(node.from_links) == 1 else list(node.from_links)
        out = [frm, node.repeats, node.module_kind, list(node.channel_args)]
        if node.p_level is not None:
            out.append(node.p_level)
        return out

    rows = [row(n) for n in graph.layers]
    return {"backbone": rows[: graph.backbone_len], "head": rows[graph.backbone_len :]}


def load_config(path: Union[str, Path]) -> DetectorGraph:
    return parse_config(Path(path).read_text())


def dump_config(graph: DetectorGraph, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(emit_config(graph), indent=1) + "\n")


# -- transformations ----------------------------------------------------------


def output_channels(graph: DetectorGraph) -> list[Optional[int]]:
    """Output channel count per layer (``None`` for the detect node)."""
    out: list[Optional[int]] = []
    for node in graph.layers:
        links = node.resolved_links()
        if node.module_kind == DETECT:
            out.append(None)
        elif node.module_kind == UPSAMPLE:
            out.append(out[links[0]] if links[0] >= 0 else INPUT_CHANNELS)
        elif node.module_kind == CONCAT:
            out.append(sum(out[i] if i >= 0 else INPUT_CHANNELS for i in links))
        else:
            out.append(node.channel_args[0] if node.channel_args else None)
    return out


def restrict_heads(graph: DetectorGraph, heads: Iterable[str]) -> DetectorGraph:
    """Drop detect inputs whose p-level is not in ``heads``."""
    heads = set(heads)
    available = graph.head_nodes()
    missing = heads - set(available)
    if missing:
        raise ConfigError(f"requested heads not present in graph: {sorted(missing)}")
    keep = tuple(sorted(available[h] for h in heads))
    detect = graph.detect
    if keep == detect.resolved_links():
        return graph
    layers = list(graph.layers)
    layers[graph.detect_index] = replace(detect, from_links=keep)
    # tag explicitly so the head mapping survives the narrowed detect input
    for level, idx in available.items():
        if idx in keep and layers[idx].p_level is None:
            layers[idx] = replace(layers[idx], p_level=level)
    return DetectorGraph(tuple(layers), graph.backbone_len, graph.detect_index)


def dependency_closure(graph: DetectorGraph, heads: Iterable[str]) -> set[int]:
    """Indices needed to compute the detect node from the selected heads."""
    heads = set(heads)
    available = graph.head_nodes()
    missing = heads - set(available)
    if missing:
        raise ConfigError(f"requested heads not present in graph: {sorted(missing)}")
    retained = {graph.detect_index}
    stack = [available[h] for h in heads]
    while stack:
        i = stack.pop()
        if i in retained or i < 0:
            continue
        retained.add(i)
        stack.extend(graph.layers[i].resolved_links())
    return retained


def round_repeats(r: int, alpha: float) -> int:
    # half away from zero; r * alpha is positive
    return max(1, math.floor(r * alpha + 0.5))


def round_channels(c: int, beta: float, granularity: int, c_max: Optional[int]) -> int:
    scaled = granularity * math.floor(c * beta / granularity + 0.5)
    scaled = max(granularity, scaled)
    if c_max is not None:
        scaled = min(scaled, granularity * (c_max // granularity))
    return scaled


def scale_graph(graph: DetectorGraph, spec: FamilySpec) -> DetectorGraph:
    layers: list[LayerNode] = []
    for node in graph.layers:
        repeats = round_repeats(node.repeats, spec.alpha)
        args = node.channel_args
        if node.is_parametric and args:
            args = (round_channels(args[0], spec.beta, spec.granularity, spec.c_max),) + args[1:]
        layers.append(replace(node, repeats=repeats, channel_args=args))
    scaled = DetectorGraph(tuple(layers), graph.backbone_len, graph.detect_index)
    return _refresh_concat(scaled)


def _refresh_concat(graph: DetectorGraph) -> DetectorGraph:
    chans = output_channels(graph)
    layers = list(graph.layers)
    for node in graph.layers:
        if node.module_kind == CONCAT:
            rest = node.channel_args[1:] if node.channel_args else ()
            layers[node.index] = replace(node, channel_args=(chans[node.index],) + rest)
    return DetectorGraph(tuple(layers), graph.backbone_len, graph.detect_index)


def simplify_attention(graph: DetectorGraph) -> DetectorGraph:
    layers = tuple(
        replace(n, module_kind=RESIDUAL) if n.module_kind == ATTENTION else n for n in graph.layers
    )
    return DetectorGraph(layers, graph.backbone_len, graph.detect_index)


def reindex_and_split(graph: DetectorGraph, retained: Iterable[int]) -> DetectorGraph:
    keep = sorted(set(retained))
    remap = {old: new for new, old in enumerate(keep)}
    if graph.detect_index not in remap:
        raise ConfigError("retained set must contain the detect node")
    layers = []
    for new, old in enumerate(keep):
        node = graph.layers[old]
        links = []
        for f in node.from_links:
            target = old - 1 if f == -1 else f
            if f == -1 and old == 0:
                links.append(-1)
            elif target not in remap:
                raise ConfigError(f"layer {old} references pruned layer {target}")
            elif f == -1 and remap[target] == new - 1:
                links.append(-1)
            else:
                links.append(remap[target])
        layers.append(replace(node, index=new, from_links=tuple(links)))
    backbone_len = sum(1 for old in keep if old < graph.backbone_len)
    return DetectorGraph(tuple(layers), backbone_len, remap[graph.detect_index])


def synthesize_family(base: DetectorGraph, spec: FamilySpec) -> DetectorGraph:
    """Derive one family member: closure, scale, simplify, then renumber."""
    narrowed = restrict_heads(base, spec.heads)
    retained = dependency_closure(narrowed, spec.heads)
    g = scale_graph(narrowed, spec)
    if spec.simplify_attention:
        g = simplify_attention(g)
    return _refresh_concat(reindex_and_split(g, retained))


def reachable_from_detect(graph: DetectorGraph) -> set[int]:
    seen: set[int] = set()
    stack = [graph.detect_index]
    while stack:
        i = stack.pop()
        if i in seen or i < 0:
            continue
        seen.add(i)
        stack.extend(graph.layers[i].resolved_links())
    return seen


def summary(graph: DetectorGraph) -> dict:
    """Layer count, total nominal channels and a parameter-count proxy.

    The proxy sums ``repeats * c_in * c_out * kernel**2`` over parametric
    layers, taking the kernel from ``args[1]`` for convs and 1 otherwise.
    """
    chans = output_channels(graph)
    params = 0
    for node in graph.layers:
        if not node.is_parametric or not node.channel_args:
            continue
        src = node.resolved_links()[0]
        c_in = chans[src] if src >= 0 else INPUT_CHANNELS
        k = node.channel_args[1] if node.module_kind == CONV and len(node.channel_args) > 1 else 1
        params += node.repeats * c_in * node.channel_args[0] * k * k
    return {
        "layers": len(graph.layers),
        "backbone_layers": graph.backbone_len,
        "heads": sorted(graph.head_nodes()),
        "total_channels": sum(c for c in chans if c is not None),
        "param_proxy": params,
    }
