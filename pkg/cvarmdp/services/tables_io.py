"""
Tables document persistence and CSV export
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Optional, Union

from pydantic import ValidationError

from cvarmdp.exceptions import DomainError, SpecValidationError
from cvarmdp.models.mdp import AnySpec, CostShift, MdpSpec, parse_spec, shift_costs, spec_to_document
from cvarmdp.models.schemas import CostShiftSchema, TablesDocument
from cvarmdp.services.pwl import PwlConcave, to_rows, write_csv
from cvarmdp.services.shortfall import ShortfallFunction
from cvarmdp.services.shortfall import to_rows as shortfall_rows
from cvarmdp.services.solver import ValueTables, expand_spec

logger = logging.getLogger(__name__)

FORMAT_VERSION = 2


def spec_hash(spec: AnySpec) -> str:
    """sha256 of the canonical MDP document"""
    canonical = json.dumps(spec_to_document(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def tables_to_document(tables: ValueTables) -> TablesDocument:
    spec = tables.spec
    v_doc = {
        str(n): {spec.states[x]: to_rows(f) for x, f in enumerate(stage)}
        for n, stage in enumerate(tables.v_stages)
    }
    q_doc = {
        str(n): {
            spec.states[x]: {spec.actions[x][a]: to_rows(f) for a, f in enumerate(qs)}
            for x, qs in enumerate(stage)
        }
        for n, stage in enumerate(tables.q_stages)
        if n >= 1
    }
    w_doc = {
        str(n): {spec.states[x]: shortfall_rows(w) for x, w in enumerate(stage)}
        for n, stage in enumerate(tables.w_stages)
    }
    shift = tables.cost_shift
    return TablesDocument(
        format_version=FORMAT_VERSION,
        spec_hash=spec_hash(tables.source_spec),
        horizon=tables.horizon,
        discount=spec.discount,
        cost_shift=CostShiftSchema(
            cvar_shift=shift.cvar_shift,
            mean_shift=shift.mean_shift,
            cvar_offset=shift.cvar_offset,
            mean_offset=shift.mean_offset,
        ),
        iterations=tables.iterations,
        error_bound=tables.error_bound,
        tail_bound=tables.tail_bound,
        epsilon=tables.epsilon,
        initial_label=tables.initial_label,
        mdp=spec_to_document(tables.source_spec),
        V=v_doc,
        Q=q_doc,
        W=w_doc,
    )


def _rows_function(rows, location: str) -> PwlConcave:
    try:
        return PwlConcave.from_rows(rows)
    except Exception as e:
        raise SpecValidationError(f"invalid breakpoint rows: {e}", location) from e


def _shortfall_function(rows, location: str) -> ShortfallFunction:
    try:
        return ShortfallFunction.from_rows(rows)
    except Exception as e:
        raise SpecValidationError(f"invalid shortfall rows: {e}", location) from e


def tables_from_document(doc: TablesDocument, initial_label: Optional[str] = None) -> ValueTables:
    if doc.format_version != FORMAT_VERSION:
        raise SpecValidationError(f"unsupported format_version {doc.format_version}", "format_version")
    source = parse_spec(doc.mdp)
    if not isinstance(source, MdpSpec):
        raise SpecValidationError("tables must embed an expanded MDP", "mdp")
    spec, _ = shift_costs(source, doc.horizon)

    n_stages = len(doc.V)
    v_stages = []
    q_stages = [()]
    w_stages = []
    for n in range(n_stages):
        stage = doc.V.get(str(n))
        w_stage = doc.W.get(str(n))
        if stage is None or w_stage is None:
            raise SpecValidationError(f"missing stage {n}", "V" if stage is None else "W")
        v_stages.append(tuple(_rows_function(stage[name], f"V.{n}.{name}") for name in spec.states))
        w_stages.append(tuple(_shortfall_function(w_stage[name], f"W.{n}.{name}") for name in spec.states))
        if n >= 1:
            q_stage = doc.Q.get(str(n))
            if q_stage is None:
                raise SpecValidationError(f"missing stage {n}", "Q")
            q_stages.append(tuple(
                tuple(
                    _rows_function(q_stage[name][action], f"Q.{n}.{name}.{action}")
                    for action in spec.actions[x]
                )
                for x, name in enumerate(spec.states)
            ))

    shift = doc.cost_shift
    return ValueTables(
        spec=spec,
        source_spec=source,
        horizon=doc.horizon,
        v_stages=tuple(v_stages),
        q_stages=tuple(q_stages),
        w_stages=tuple(w_stages),
        cost_shift=CostShift(shift.cvar_shift, shift.mean_shift, shift.cvar_offset, shift.mean_offset),
        iterations=doc.iterations,
        error_bound=doc.error_bound,
        tail_bound=doc.tail_bound,
        epsilon=doc.epsilon,
        initial_label=initial_label or doc.initial_label,
    )


def dumps_tables(tables: ValueTables) -> str:
    return tables_to_document(tables).model_dump_json(indent=1, by_alias=True)


def save_tables(tables: ValueTables, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_tables(tables), encoding="utf-8")
    logger.info("wrote tables to %s", path)


def load_tables(path: Union[str, Path], expected: Optional[AnySpec] = None) -> ValueTables:
    """Read a tables document; refuse it when `expected` hashes differently"""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise SpecValidationError(f"cannot read tables: {e}", str(path)) from e
    try:
        doc = TablesDocument.model_validate_json(text)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first.get("loc", ()))
        raise SpecValidationError(first.get("msg", str(e)), location or str(path)) from e

    label = None
    if expected is not None:
        expanded, label = expand_spec(expected)
        if spec_hash(expanded) != doc.spec_hash:
            raise SpecValidationError("tables were solved for a different MDP", "spec_hash")
    return tables_from_document(doc, label)


def export_pwl_csv(tables: ValueTables, stage: int, state: Union[int, str], stream) -> None:
    if stage < 0:
        raise DomainError(f"stage {stage} out of range")
    write_csv(tables.value_function(stage, state), stream)
