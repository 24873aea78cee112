"""
Pydantic schemas for the JSON documents the package reads and writes
"""
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ObjectiveMode(str, Enum):
    PURE_CVAR = "pure-cvar"
    MEAN_PLUS_ALPHA_CVAR = "mean-plus-alpha-cvar"
    MEAN_PLUS_CVAR = "mean-plus-cvar"


class DerivativeSide(str, Enum):
    LEFT = "left"
    RIGHT = "right"


# MDP document
class OutcomeEntry(BaseModel):
    """One realisation of a random one-step cost"""
    model_config = ConfigDict(extra="forbid")

    cost: float
    prob: float
    label: Optional[str] = Field(None, description="Outcome label; defaults to its position")


class TransitionEntry(BaseModel):
    """One edge (from, action, to) of the transition law"""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    from_state: str = Field(..., alias="from")
    action: str
    to: str
    prob: float
    cvar_cost: Optional[float] = None
    mean_cost: float = 0.0
    outcomes: Optional[List[OutcomeEntry]] = None

    @model_validator(mode="after")
    def _one_cost_form(self) -> "TransitionEntry":
        if self.cvar_cost is None and self.outcomes is None:
            raise ValueError("either cvar_cost or outcomes is required")
        if self.cvar_cost is not None and self.outcomes is not None:
            raise ValueError("cvar_cost and outcomes are mutually exclusive")
        if self.outcomes is not None and not self.outcomes:
            raise ValueError("outcomes must not be empty")
        return self


class MdpDocument(BaseModel):
    """Finite MDP problem instance"""
    model_config = ConfigDict(extra="forbid")

    states: List[str] = Field(..., min_length=1)
    actions: Dict[str, List[str]]
    discount: float
    transitions: List[TransitionEntry]
    terminal_cvar_cost: Dict[str, float] = Field(default_factory=dict)
    terminal_mean_cost: Dict[str, float] = Field(default_factory=dict)


# Tables document
BreakpointRow = Tuple[float, float, float]
ShortfallRow = Tuple[float, float]


class CostShiftSchema(BaseModel):
    cvar_shift: float = 0.0
    mean_shift: float = 0.0
    cvar_offset: float = 0.0
    mean_offset: float = 0.0


class TablesDocument(BaseModel):
    """Versioned serialisation of solved value tables"""
    format_version: int = 2
    spec_hash: str
    horizon: Optional[int] = Field(None, description="Stage count; null for infinite horizon")
    discount: float
    cost_shift: CostShiftSchema
    iterations: Optional[int] = None
    error_bound: Optional[float] = None
    tail_bound: Optional[float] = None
    epsilon: Optional[float] = Field(None, description="Requested accuracy of an infinite-horizon solve")
    initial_label: Optional[str] = Field(None, description="Outcome label of initial augmented states")
    mdp: MdpDocument
    V: Dict[str, Dict[str, List[BreakpointRow]]]
    Q: Dict[str, Dict[str, Dict[str, List[BreakpointRow]]]]
    W: Dict[str, Dict[str, List[ShortfallRow]]] = Field(..., description="Shortfall breakpoints (threshold, value) per stage")


# Verification report
class PropertyReport(BaseModel):
    """Outcome of one verification property over all instances"""
    name: str
    passed: int = 0
    failed: int = 0
    skipped: int = 0
    max_error: float = 0.0
    messages: List[str] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failed == 0


class VerificationReport(BaseModel):
    """Merged report of a verification run"""
    instances: int
    properties: List[PropertyReport]
    execution_time_seconds: float

    @property
    def ok(self) -> bool:
        return all(p.ok for p in self.properties)
