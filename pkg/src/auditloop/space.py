"""Audit-space construction: unit enumeration, parameter costs, reference forwards.

The audit space is the fixed library of candidate adapter units (family x
topology x size x insertion site) that the selection loop gates on and off.
Units are plain frozen dataclasses; the space is immutable after
construction and safe to share across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    EmptySpace,
    IncompatibleTemplate,
    InvalidParams,
    ShapeMismatch,
    UnknownSibling,
)


class Family(Enum):
    LORA = "LoRA"
    ADAPTFORMER = "AdaptFormer"
    AFFINE_LN = "AffineLN"


class Topology(Enum):
    SA = "SA"
    PA = "PA"
    SAPA = "SAPA"
    NONE = "None"


class Slot(Enum):
    ATTENTION = "Attention"
    FEEDFORWARD = "FeedForward"
    NORM = "Norm"


_SLOT_ORDER = {Slot.ATTENTION: 0, Slot.FEEDFORWARD: 1, Slot.NORM: 2}
_FAMILY_ORDER = {Family.LORA: 0, Family.ADAPTFORMER: 1, Family.AFFINE_LN: 2}
_TOPOLOGY_ORDER = {Topology.SA: 0, Topology.PA: 1, Topology.SAPA: 2, Topology.NONE: 3}

DEFAULT_LORA_RANKS = (2, 4, 8, 16)
DEFAULT_ADAPTFORMER_BOTTLENECKS = (4, 8, 16, 32)


@dataclass(frozen=True)
class AdapterKind:
    """Family, topology and projection size of one adapter variant."""

    family: Family
    topology: Topology
    size: int

    def __post_init__(self) -> None:
        if self.family is Family.AFFINE_LN:
            if self.topology is not Topology.NONE or self.size != 0:
                raise InvalidParams("AffineLN kinds use topology None and size 0")
        else:
            if self.topology is Topology.NONE:
                raise InvalidParams(f"{self.family.value} requires an SA/PA/SAPA topology")
            if self.size < 1:
                raise InvalidParams("projection size must be a positive integer")


@dataclass(frozen=True)
class Template:
    """One row of a space schema: attach `family/topology/size` at every `slot`."""

    family: Family
    topology: Topology
    size: int
    slot: Slot


@dataclass(frozen=True)
class AdapterUnit:
    """One gateable candidate in the audit space.

    `cost` is the unit's trainable-parameter count expressed as a fraction of
    the backbone parameter count, so budgets read as parameter percentages.
    """

    id: int
    kind: AdapterKind
    layer: int
    slot: Slot
    hidden_dim: int
    cost: float
    gate: bool = False


@dataclass(frozen=True)
class BackboneDesc:
    """Shape summary of the frozen backbone the space attaches to.

    `norm_params_per_layer` is descriptive metadata (the backbone's own norm
    parameter count); unit costs are always derived from `raw_param_count`.
    """

    num_layers: int
    hidden_dims: tuple[int, ...]
    backbone_param_count: int
    norm_params_per_layer: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        if self.num_layers < 1:
            raise InvalidParams("backbone needs at least one layer")
        if len(self.hidden_dims) != self.num_layers:
            raise InvalidParams("hidden_dims length must equal num_layers")
        if any(d < 1 for d in self.hidden_dims):
            raise InvalidParams("hidden dims must be positive")
        if self.backbone_param_count < 1:
            raise InvalidParams("backbone_param_count must be positive")
        if self.norm_params_per_layer is not None and self.norm_params_per_layer < 1:
            raise InvalidParams("norm_params_per_layer must be positive when given")


def raw_param_count(kind: AdapterKind, hidden_dim: int, *, sapa_shared_weights: bool = False) -> int:
    """Trainable-parameter count of one unit before budget normalization.

    SA and PA carry one down/up projection pair (2*D*size). SAPA carries an
    independent pair per branch (4*D*size) unless `sapa_shared_weights`
    collapses the two branches onto one pair. AffineLN is a scale and shift
    vector (2*D).
    """
    if hidden_dim < 1:
        raise InvalidParams("hidden_dim must be positive")
    if kind.family is Family.AFFINE_LN:
        return 2 * hidden_dim
    per_pair = 2 * hidden_dim * kind.size
    if kind.topology is Topology.SAPA and not sapa_shared_weights:
        return 2 * per_pair
    return per_pair


def _branch(v: np.ndarray, w_down: np.ndarray, w_up: np.ndarray) -> np.ndarray:
    d_model = v.shape[0]
    w_down = np.asarray(w_down, dtype=float)
    w_up = np.asarray(w_up, dtype=float)
    if w_down.ndim != 2 or w_up.ndim != 2:
        raise ShapeMismatch("branch weights must be 2-D matrices")
    if w_down.shape[0] != d_model or w_up.shape[1] != d_model:
        raise ShapeMismatch(
            f"branch weights {w_down.shape}x{w_up.shape} do not map dimension {d_model} to itself"
        )
    if w_down.shape[1] != w_up.shape[0]:
        raise ShapeMismatch("down-projection width must match up-projection height")
    return np.maximum(v @ w_down, 0.0) @ w_up


def adapter_forward(topology: Topology, x, f_x, weights) -> np.ndarray:
    """Reference numeric forward of one adapter on a single feature vector.

    `x` is the layer input, `f_x` the frozen layer's output, both length D.
    `weights` is one (w_down, w_up) pair for SA/PA. For SAPA it is either a
    pair of pairs ((serial), (parallel)) or a single shared pair applied to
    both branches. Serial reads f_x, parallel reads x, and the composite sums
    the two branch outputs.
    """
    x = np.asarray(x, dtype=float)
    f_x = np.asarray(f_x, dtype=float)
    if x.ndim != 1 or x.shape != f_x.shape:
        raise ShapeMismatch("x and f_x must be 1-D vectors of equal length")
    if topology is Topology.SA:
        return _branch(f_x, *weights)
    if topology is Topology.PA:
        return _branch(x, *weights)
    if topology is Topology.SAPA:
        first = weights[0]
        if isinstance(first, np.ndarray) or not isinstance(first, (tuple, list)):
            sa_pair = pa_pair = weights  # shared pair, both branches
        else:
            sa_pair, pa_pair = weights
        return _branch(f_x, *sa_pair) + _branch(x, *pa_pair)
    raise InvalidParams(f"topology {topology} has no forward")


def _check_template(tpl: Template) -> AdapterKind:
    kind = AdapterKind(tpl.family, tpl.topology, tpl.size)
    if tpl.slot is Slot.NORM and tpl.family is not Family.AFFINE_LN:
        raise IncompatibleTemplate(f"{tpl.family.value} cannot attach to a Norm slot")
    if tpl.family is Family.AFFINE_LN and tpl.slot is not Slot.NORM:
        raise IncompatibleTemplate("AffineLN only attaches to Norm slots")
    return kind


def build_audit_space(
    backbone: BackboneDesc,
    templates: Sequence[Template],
    *,
    initial_active: Callable[[AdapterUnit], bool] | None = None,
    sapa_shared_weights: bool = False,
) -> list[AdapterUnit]:
    """Enumerate one unit per (layer x template), id-ordered lexicographically.

    Ids run 0..N-1 sorted by (layer, slot, family, topology, size) and are
    stable for a run. Gates default to all-inactive unless `initial_active`
    returns True for a unit.
    """
    kinds = [_check_template(t) for t in templates]
    if not templates:
        raise EmptySpace("schema contains no templates")

    keyed = []
    for layer in range(backbone.num_layers):
        d = backbone.hidden_dims[layer]
        for tpl, kind in zip(templates, kinds):
            key = (
                layer,
                _SLOT_ORDER[tpl.slot],
                _FAMILY_ORDER[tpl.family],
                _TOPOLOGY_ORDER[tpl.topology],
                tpl.size,
            )
            keyed.append((key, layer, tpl, kind, d))
    keyed.sort(key=lambda item: item[0])
    if not keyed:
        raise EmptySpace("no units generated")

    units: list[AdapterUnit] = []
    for uid, (_, layer, tpl, kind, d) in enumerate(keyed):
        raw = raw_param_count(kind, d, sapa_shared_weights=sapa_shared_weights)
        unit = AdapterUnit(
            id=uid,
            kind=kind,
            layer=layer,
            slot=tpl.slot,
            hidden_dim=d,
            cost=raw / backbone.backbone_param_count,
            gate=False,
        )
        if initial_active is not None and initial_active(unit):
            unit = replace(unit, gate=True)
        units.append(unit)
    return units


def default_templates() -> list[Template]:
    """Attention: LoRA ranks x SA/PA/SAPA. Feed-forward: LoRA plus AdaptFormer
    bottlenecks, same topologies. Norm: AffineLN. 37 templates total."""
    out: list[Template] = []
    for topo in (Topology.SA, Topology.PA, Topology.SAPA):
        for r in DEFAULT_LORA_RANKS:
            out.append(Template(Family.LORA, topo, r, Slot.ATTENTION))
    for topo in (Topology.SA, Topology.PA, Topology.SAPA):
        for r in DEFAULT_LORA_RANKS:
            out.append(Template(Family.LORA, topo, r, Slot.FEEDFORWARD))
        for d in DEFAULT_ADAPTFORMER_BOTTLENECKS:
            out.append(Template(Family.ADAPTFORMER, topo, d, Slot.FEEDFORWARD))
    out.append(Template(Family.AFFINE_LN, Topology.NONE, 0, Slot.NORM))
    return out


class AuditSpace:
    """Immutable container over the unit list with derived lookups."""

    def __init__(self, backbone: BackboneDesc, units: Sequence[AdapterUnit]):
        self.backbone = backbone
        self.units: tuple[AdapterUnit, ...] = tuple(units)
        if not self.units:
            raise EmptySpace("audit space has no units")
        self.costs = np.array([u.cost for u in self.units], dtype=float)
        if np.any(self.costs <= 0.0):
            raise InvalidParams("every unit must have positive cost")
        self._size_groups: dict[tuple, dict[int, int]] = {}
        for u in self.units:
            key = (u.layer, u.slot, u.kind.family, u.kind.topology)
            self._size_groups.setdefault(key, {})[u.kind.size] = u.id

    def __len__(self) -> int:
        return len(self.units)

    @property
    def n_units(self) -> int:
        return len(self.units)

    def initial_gates(self) -> np.ndarray:
        return np.array([u.gate for u in self.units], dtype=bool)

    def group_key(self, unit_id: int) -> tuple:
        u = self.units[unit_id]
        return (u.layer, u.slot, u.kind.family, u.kind.topology)

    def sibling(self, unit_id: int, size: int) -> int:
        """Id of the same-site unit carrying `size` instead of the current one."""
        group = self._size_groups[self.group_key(unit_id)]
        if size not in group:
            u = self.units[unit_id]
            raise UnknownSibling(
                f"no size-{size} sibling for unit {unit_id} "
                f"({u.kind.family.value}/{u.kind.topology.value} at layer {u.layer})"
            )
        return group[size]

    @classmethod
    def build(
        cls,
        backbone: BackboneDesc,
        templates: Sequence[Template],
        *,
        initial_active: Callable[[AdapterUnit], bool] | None = None,
        sapa_shared_weights: bool = False,
    ) -> "AuditSpace":
        units = build_audit_space(
            backbone,
            templates,
            initial_active=initial_active,
            sapa_shared_weights=sapa_shared_weights,
        )
        return cls(backbone, units)

    @classmethod
    def from_json(cls, doc: dict | str | Path) -> "AuditSpace":
        """Load a schema document {"backbone": ..., "templates": [...]} or a
        previously dumped space {"backbone": ..., "units": [...]}.

        Backbone keys: layers, hidden_dims, param_count, optional
        norm_params_per_layer. Template keys: family, topology, size, slot.
        Optional schema flag: sapa_shared_weights.
        """
        if not isinstance(doc, dict):
            doc = json.loads(Path(doc).read_text())
        try:
            bb = doc["backbone"]
            backbone = BackboneDesc(
                num_layers=int(bb["layers"]),
                hidden_dims=tuple(int(d) for d in bb["hidden_dims"]),
                backbone_param_count=int(bb["param_count"]),
                norm_params_per_layer=(
                    int(bb["norm_params_per_layer"]) if "norm_params_per_layer" in bb else None
                ),
            )
            if "units" in doc:
                units = [
                    AdapterUnit(
                        id=int(u["id"]),
                        kind=AdapterKind(Family(u["family"]), Topology(u["topology"]), int(u["size"])),
                        layer=int(u["layer"]),
                        slot=Slot(u["slot"]),
                        hidden_dim=int(u["hidden_dim"]),
                        cost=float(u["cost"]),
                        gate=bool(u.get("gate", False)),
                    )
                    for u in doc["units"]
                ]
                return cls(backbone, units)
            templates = [
                Template(
                    family=Family(t["family"]),
                    topology=Topology(t["topology"]),
                    size=int(t["size"]),
                    slot=Slot(t["slot"]),
                )
                for t in doc["templates"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidParams(f"malformed space schema: {exc}") from exc
        shared = bool(doc.get("sapa_shared_weights", False))
        return cls.build(backbone, templates, sapa_shared_weights=shared)

    def to_json(self) -> dict:
        """Dump the generated space (id -> unit descriptor) for reproducibility."""
        return {
            "backbone": {
                "layers": self.backbone.num_layers,
                "hidden_dims": list(self.backbone.hidden_dims),
                "param_count": self.backbone.backbone_param_count,
                **(
                    {"norm_params_per_layer": self.backbone.norm_params_per_layer}
                    if self.backbone.norm_params_per_layer is not None
                    else {}
                ),
            },
            "units": [
                {
                    "id": u.id,
                    "family": u.kind.family.value,
                    "topology": u.kind.topology.value,
                    "size": u.kind.size,
                    "layer": u.layer,
                    "slot": u.slot.value,
                    "hidden_dim": u.hidden_dim,
                    "cost": u.cost,
                    "gate": u.gate,
                }
                for u in self.units
            ],
        }


def default_backbone() -> BackboneDesc:
    """Desk-scale stand-in backbone: 2 stages, 1.5M parameters."""
    return BackboneDesc(
        num_layers=2,
        hidden_dims=(48, 96),
        backbone_param_count=1_500_000,
        norm_params_per_layer=192,
    )


def default_space() -> AuditSpace:
    """74-unit space: the default schema over the default backbone."""
    return AuditSpace.build(default_backbone(), default_templates())
